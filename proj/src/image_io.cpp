#include "sagan/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

#include "sagan/common.hpp"

namespace sagan::imgio {

namespace {

cv::Mat tensor_to_bgr8(const Tensor& chw) {
    if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3))
        throw ShapeError("save_image expects (1|3,H,W)");
    const int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    cv::Mat img(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            auto to_u8 = [&](int64_t ch) {
                double v = chw.data[static_cast<size_t>((ch * h + y) * w + x)];
                double scaled = (v + 1.0) * 127.5;
                return static_cast<uchar>(std::lround(std::clamp(scaled, 0.0, 255.0)));
            };
            uchar r = to_u8(0);
            uchar g = c == 3 ? to_u8(1) : r;
            uchar b = c == 3 ? to_u8(2) : r;
            img.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x)) = cv::Vec3b(b, g, r);
        }
    return img;
}

}  // namespace

Tensor load_image(const std::string& path, int64_t h, int64_t w) {
    cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
    if (img.empty()) throw IoError("cannot read image: " + path);
    cv::Mat resized;
    cv::resize(img, resized, cv::Size(static_cast<int>(w), static_cast<int>(h)), 0, 0,
               cv::INTER_AREA);
    Tensor out({3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const auto& px = resized.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
            // BGR -> RGB, [0,255] -> [-1,1]
            out.data[static_cast<size_t>((0 * h + y) * w + x)] = px[2] / 127.5 - 1.0;
            out.data[static_cast<size_t>((1 * h + y) * w + x)] = px[1] / 127.5 - 1.0;
            out.data[static_cast<size_t>((2 * h + y) * w + x)] = px[0] / 127.5 - 1.0;
        }
    return out;
}

Tensor load_mask(const std::string& path, int64_t h, int64_t w) {
    cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (img.empty()) throw IoError("cannot read mask: " + path);
    cv::Mat resized;
    cv::resize(img, resized, cv::Size(static_cast<int>(w), static_cast<int>(h)), 0, 0,
               cv::INTER_NEAREST);
    Tensor out({1, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            out.data[static_cast<size_t>(y * w + x)] =
                resized.at<uchar>(static_cast<int>(y), static_cast<int>(x)) >= 128 ? 1.0 : 0.0;
    return out;
}

void save_image(const Tensor& chw, const std::string& path) {
    if (!cv::imwrite(path, tensor_to_bgr8(chw)))
        throw IoError("cannot write image: " + path);
}

void save_grid(const std::vector<std::vector<Tensor>>& cells, const std::string& path) {
    if (cells.empty() || cells[0].empty()) throw ValueError("save_grid: empty grid");
    const int64_t c = cells[0][0].dim(0), h = cells[0][0].dim(1), w = cells[0][0].dim(2);
    (void)c;
    const int sep = 2;
    const size_t rows = cells.size(), cols = cells[0].size();
    cv::Mat canvas(static_cast<int>(rows * h + (rows + 1) * sep),
                   static_cast<int>(cols * w + (cols + 1) * sep), CV_8UC3,
                   cv::Scalar(32, 32, 32));
    for (size_t r = 0; r < rows; ++r) {
        if (cells[r].size() != cols) throw ValueError("save_grid: ragged grid");
        for (size_t cl = 0; cl < cols; ++cl) {
            cv::Mat cell = tensor_to_bgr8(cells[r][cl]);
            cv::Rect roi(static_cast<int>(cl * w + (cl + 1) * sep),
                         static_cast<int>(r * h + (r + 1) * sep),
                         static_cast<int>(w), static_cast<int>(h));
            cell.copyTo(canvas(roi));
        }
    }
    if (!cv::imwrite(path, canvas)) throw IoError("cannot write grid: " + path);
}

void save_line_plot(const std::vector<double>& xs, const std::vector<double>& ys,
                    const std::string& title, const std::string& path) {
    if (xs.size() != ys.size() || xs.empty())
        throw ValueError("save_line_plot: xs/ys must be nonempty and equal length");
    const int width = 640, height = 480, margin = 60;
    cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    double xmin = *std::min_element(xs.begin(), xs.end());
    double xmax = *std::max_element(xs.begin(), xs.end());
    double ymin = *std::min_element(ys.begin(), ys.end());
    double ymax = *std::max_element(ys.begin(), ys.end());
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    ymin -= 0.05 * (ymax - ymin);
    ymax += 0.05 * (ymax - ymin);
    auto px = [&](double x) {
        return margin + static_cast<int>((x - xmin) / (xmax - xmin) * (width - 2 * margin));
    };
    auto py = [&](double y) {
        return height - margin -
               static_cast<int>((y - ymin) / (ymax - ymin) * (height - 2 * margin));
    };
    cv::line(canvas, {margin, height - margin}, {width - margin, height - margin},
             cv::Scalar(0, 0, 0), 1);
    cv::line(canvas, {margin, height - margin}, {margin, margin}, cv::Scalar(0, 0, 0), 1);
    cv::putText(canvas, title, {margin, margin / 2}, cv::FONT_HERSHEY_SIMPLEX, 0.6,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    for (size_t i = 0; i < xs.size(); ++i) {
        cv::circle(canvas, {px(xs[i]), py(ys[i])}, 3, cv::Scalar(64, 64, 200), cv::FILLED);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.3g", ys[i]);
        cv::putText(canvas, buf, {px(xs[i]) + 5, py(ys[i]) - 5}, cv::FONT_HERSHEY_SIMPLEX,
                    0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
        if (i > 0)
            cv::line(canvas, {px(xs[i - 1]), py(ys[i - 1])}, {px(xs[i]), py(ys[i])},
                     cv::Scalar(64, 64, 200), 2, cv::LINE_AA);
    }
    if (!cv::imwrite(path, canvas)) throw IoError("cannot write plot: " + path);
}

}  // namespace sagan::imgio
