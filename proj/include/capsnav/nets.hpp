#pragma once

#include <optional>
#include <string>
#include <vector>

#include "capsnav/capsules.hpp"
#include "capsnav/layers.hpp"
#include "capsnav/tensor.hpp"

namespace capsnav {

inline constexpr int kActionCount = 4;
inline constexpr int kObsChannels = 3;
inline constexpr int kObsSize = 42;
inline constexpr int kLstmHidden = 256;
inline constexpr int kCapsuleDim = 8;
inline constexpr int kOutCapsules = 4;
inline constexpr int kOutCapsuleDim = 16;
inline constexpr int kRoutingIters = 3;
inline constexpr int kEmbedDim = 288;   // 3x3x32 after four stride-2 convs
inline constexpr int kIcmHidden = 256;

enum class NetKind { kCapsEm, kCapsEmIr, kCnnBaseline, kIcmCnn };

NetKind net_kind_from_string(const std::string& s);
std::string to_string(NetKind kind);
bool uses_icm(NetKind kind);

struct PolicyOutput {
    Tensor logits;    // [4]
    Tensor value;     // scalar
    LstmState state;  // next recurrent state
};

// Actor-critic network of the capsule exploration module: one conv block,
// primary capsules (196 x dim 8), dense capsules (4 x dim 16, 3 routing
// iterations), LSTM(64 -> 256), separate policy and value heads.
struct CapsEmNet {
    ConvParams front_conv;        // 3x3, 3->32, stride 2, pad 1 (42 -> 21)
    BatchNormParams front_bn;
    ConvParams primary_conv;      // 9x9, 32->32, stride 2, pad 0 (21 -> 7)
    DenseCapsParams dense_caps;   // 196x8 -> 4x16
    LstmParams lstm;              // 64 -> 256
    Tensor policy_w, policy_b;    // 256 -> 4
    Tensor value_w, value_b;      // 256 -> 1
};

CapsEmNet make_capsem_net(std::uint64_t seed);
PolicyOutput capsem_forward(const Tensor& obs, const LstmState& state, CapsEmNet& net);

// Four blocks of (3x3 conv stride 2 pad 1, batch norm, ELU); 42x42x3 in,
// flat embedding of width 288 out.
struct CnnEmbedNet {
    std::vector<ConvParams> convs;
    std::vector<BatchNormParams> bns;
};

CnnEmbedNet make_cnn_embed_net(Rng& rng);
Tensor cnn_embed(const Tensor& obs, CnnEmbedNet& net);

// CNN-only actor-critic baseline: shared embedding block, LSTM, heads.
struct CnnPolicyNet {
    CnnEmbedNet embed;
    LstmParams lstm;  // 288 -> 256
    Tensor policy_w, policy_b;
    Tensor value_w, value_b;
};

CnnPolicyNet make_cnn_policy_net(std::uint64_t seed);
PolicyOutput cnn_baseline_forward(const Tensor& obs, const LstmState& state, CnnPolicyNet& net);

// Intrinsic curiosity module: its own embedding block shared between the
// forward model (phi_t + one-hot action -> predicted phi_{t+1}) and the
// inverse model (phi_t + phi_{t+1} -> action logits).
struct IcmNet {
    CnnEmbedNet embed;
    Tensor fwd_w1, fwd_b1, fwd_w2, fwd_b2;
    Tensor inv_w1, inv_b1, inv_w2, inv_b2;
    double eta = 0.01;  // intrinsic reward scale
};

IcmNet make_icm_net(std::uint64_t seed, double eta);

struct IcmOutput {
    double r_intrinsic;  // eta * 0.5 * |phi_pred - phi_next|^2, >= 0
    Tensor fwd_loss;     // the same quantity unscaled, on the tape
    Tensor inv_logits;   // [4]
};

// phi_next is treated as a constant target for the forward loss, and the
// forward model's phi_t input is detached: the embedding is shaped only
// by the inverse model.
IcmOutput icm_intrinsic(const Tensor& phi_t, int action, const Tensor& phi_next, IcmNet& net);

// ---- parameter registry / accounting ----

struct NamedParam {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

// One agent: a policy network plus an optional intrinsic module.
struct AgentNet {
    NetKind kind;
    std::uint64_t seed = 0;
    std::optional<CapsEmNet> capsem;
    std::optional<CnnPolicyNet> cnn;
    std::optional<IcmNet> icm;

    PolicyOutput forward(const Tensor& obs, const LstmState& state);
    std::vector<NamedParam> params();  // stable order
    bool has_icm() const { return icm.has_value(); }
};

AgentNet make_agent_net(NetKind kind, std::uint64_t seed, double icm_eta = 0.01);

// Count of trainable scalars (batch-norm running stats excluded).
std::int64_t param_count(const std::vector<NamedParam>& params);

struct LayerCount {
    std::string layer;
    std::int64_t count;
};

// Trainable parameters grouped by the prefix before the first dot.
std::vector<LayerCount> layer_counts(const std::vector<NamedParam>& params);

// ---- checkpointing ----

// Flat archive: JSON manifest (net kind, seed, tensor names/shapes), then
// raw little-endian 64-bit floats per tensor in manifest order.
void save_checkpoint(const std::string& path, AgentNet& net);

struct CheckpointInfo {
    NetKind kind;
    std::uint64_t seed;
    double icm_eta;
};

CheckpointInfo read_checkpoint_info(const std::string& path);

// Overwrites every named parameter of `net` from the archive. Throws
// LoadError listing each offending name/shape on mismatch.
void curriculum_load(const std::string& path, AgentNet& net);

// Convenience: construct the net the checkpoint describes and load it.
AgentNet load_agent_checkpoint(const std::string& path);

}  // namespace capsnav
