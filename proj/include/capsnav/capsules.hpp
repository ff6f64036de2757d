#pragma once

#include "capsnav/layers.hpp"
#include "capsnav/tensor.hpp"

namespace capsnav {

// A set of pose vectors flowing between capsule layers.
struct CapsuleBank {
    Tensor poses;  // [count, dim]
    int count = 0;
    int dim = 0;
};

CapsuleBank make_bank(Tensor poses);

// Affine prediction matrices of a dense capsule layer:
// W [in_count, out_count, out_dim, in_dim].
struct DenseCapsParams {
    Tensor W;
    int routing_iters = 3;

    int in_count() const { return W.shape()[0]; }
    int out_count() const { return W.shape()[1]; }
    int out_dim() const { return W.shape()[2]; }
    int in_dim() const { return W.shape()[3]; }
};

DenseCapsParams make_dense_caps(int in_count, int in_dim, int out_count, int out_dim,
                                int routing_iters, Rng& rng);

// Routing bookkeeping. couplings holds one [in_count, out_count] matrix
// per iteration (softmax over the higher capsules j for each lower i);
// back() is the matrix the final aggregation used.
struct RoutingState {
    Tensor logits;                   // b, [in_count, out_count]
    std::vector<Tensor> couplings;   // c per iteration
};

// v = (|s|^2 / (1 + |s|^2)) * s / |s|, applied per row for rank-2 input.
// squash(0) = 0 and the gradient there is 0.
Tensor squash(const Tensor& s);

// u_hat[i, j, :] = W[i, j] * u_i for every (lower, higher) pair.
Tensor predict(const CapsuleBank& u, const DenseCapsParams& p);

// Routing-by-agreement over predictions u_hat [in, out, out_dim].
// Logits start at zero; each iteration couples, aggregates, squashes,
// then (except after the last pass) reinforces by dot-product agreement.
// Only the final aggregation pass carries gradients; the coupling
// updates are detached bookkeeping.
std::pair<CapsuleBank, RoutingState> dynamic_routing(const Tensor& u_hat, int iters);

// Convolve, regroup channels into capsules of dimension caps_dim, squash.
// Capsule order: (channel group, row, column), row-major.
CapsuleBank primary_capsules(const Tensor& features, const ConvParams& conv, int caps_dim);

// predict + dynamic_routing with p.routing_iters.
CapsuleBank dense_capsules(const CapsuleBank& u, const DenseCapsParams& p);

}  // namespace capsnav
