#ifndef SAGAN_TAPE_HPP
#define SAGAN_TAPE_HPP

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "sagan/geometry.hpp"
#include "sagan/tensor.hpp"

namespace sagan::ad {

// Reverse-mode autodiff over double tensors. A Tape owns the nodes it
// creates; creation order is a valid topological order, so backward is a
// single reverse sweep. Graphs are rebuilt per step (define-by-run).

struct Node {
    Tensor value;
    Tensor grad;                    // allocated lazily on first accumulation
    bool requires_grad = false;
    std::function<void(Node&)> backward_fn;
    std::vector<Node*> inputs;

    void accumulate(const Tensor& g);
    Tensor& grad_buffer();          // zero-allocates if needed
};

using Var = Node*;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- leaves -------------------------------------------------------------
    Var constant(Tensor t);
    Var input(Tensor t, bool requires_grad = true);
    // Leaf bound to external parameter storage; deduplicated per tape so a
    // parameter used twice shares one node (grads accumulate).
    Var param(Tensor* storage);
    const Tensor* grad_of(const Tensor* storage) const;

    // --- elementwise ---------------------------------------------------------
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var neg(Var a);
    Var abs(Var a);
    Var square(Var a);
    Var sqrt(Var a);                // subgradient 0 at 0
    Var tanh(Var a);
    Var relu(Var a);
    Var leaky_relu(Var a, double slope = 0.2);

    // --- reductions / shaping ------------------------------------------------
    Var mean_all(Var a);            // -> scalar {1}
    Var sum_all(Var a);             // -> scalar {1}
    Var row_sum(Var a);             // (N,M) -> (N,1)
    Var reshape(Var a, std::vector<int64_t> shape);
    Var flatten_images(Var a);      // (N,C,H,W) -> (N, C*H*W)
    Var concat_cols(Var a, Var b);  // (N,P)+(N,Q) -> (N,P+Q)
    Var concat_channels(Var a, Var b);          // NCHW along C
    Var detach(Var a);

    // Broadcasts a length-D vector to (N,D,H,W) constant planes.
    Var tile_code(Var code, int64_t n, int64_t h, int64_t w);
    // Broadcasts a length-D vector to (N,D) rows.
    Var repeat_rows(Var code, int64_t n);
    // Multiplies (N,C,H,W) by a (N,1,H,W) mask broadcast over channels.
    Var mul_mask(Var a, Var mask);

    // --- linear algebra / conv -----------------------------------------------
    Var matmul(Var a, Var w);       // (N,K) x (K,M) -> (N,M)
    Var add_rowvec(Var a, Var bias);            // (N,M) + (M)
    Var conv2d(Var x, Var w, Var bias, int stride, int pad);
    Var upsample_nearest2(Var x);

    // --- geometry ------------------------------------------------------------
    // Backward-warps each batch item with its own parameter row.
    // img (N,C,H,W), params (N,P) -> (N,C,out_h,out_w)
    Var warp_by_transform(Var img, Var params, geometry::TransformKind kind,
                          int64_t out_h, int64_t out_w, double fill);
    // Batched closed-form inverse in the pinned gauge: (N,P) -> (N,P).
    Var invert_transform(Var params, geometry::TransformKind kind);

    // --- engine ----------------------------------------------------------------
    // Seeds root.grad with 1 and sweeps the tape in reverse creation order.
    void backward(Var root);
    size_t size() const { return nodes_.size(); }

private:
    Var make(Tensor value, std::vector<Var> inputs,
             std::function<void(Node&)> backward_fn);
    std::vector<std::unique_ptr<Node>> nodes_;
    std::unordered_map<const Tensor*, Var> param_nodes_;
};

}  // namespace sagan::ad

#endif  // SAGAN_TAPE_HPP
