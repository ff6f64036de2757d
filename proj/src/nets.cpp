#include "capsnav/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace capsnav {

namespace {

void check_obs(const Tensor& obs) {
    if (obs.shape() != Shape{kObsChannels, kObsSize, kObsSize})
        throw ShapeError("expected observation [3, 42, 42], got " + shape_str(obs.shape()));
}

void check_finite(const PolicyOutput& out) {
    for (double v : out.logits.value())
        if (!std::isfinite(v)) throw ContractError("policy logits are not finite");
    if (!std::isfinite(out.value.item())) throw ContractError("value estimate is not finite");
}

PolicyOutput heads_forward(const Tensor& features, const LstmState& state, const LstmParams& lstm,
                           const Tensor& pw, const Tensor& pb, const Tensor& vw, const Tensor& vb) {
    LstmState next = lstm_step(features, state, lstm);
    PolicyOutput out;
    out.logits = linear(next.h, pw, pb);
    out.value = linear(next.h, vw, vb);
    out.state = next;
    check_finite(out);
    return out;
}

}  // namespace

NetKind net_kind_from_string(const std::string& s) {
    if (s == "capsem") return NetKind::kCapsEm;
    if (s == "capsem_ir") return NetKind::kCapsEmIr;
    if (s == "cnn_baseline") return NetKind::kCnnBaseline;
    if (s == "icm_cnn") return NetKind::kIcmCnn;
    throw ConfigError("unknown net kind: " + s +
                      " (expected capsem | capsem_ir | cnn_baseline | icm_cnn)");
}

std::string to_string(NetKind kind) {
    switch (kind) {
        case NetKind::kCapsEm: return "capsem";
        case NetKind::kCapsEmIr: return "capsem_ir";
        case NetKind::kCnnBaseline: return "cnn_baseline";
        case NetKind::kIcmCnn: return "icm_cnn";
    }
    throw ConfigError("invalid net kind");
}

bool uses_icm(NetKind kind) {
    return kind == NetKind::kCapsEmIr || kind == NetKind::kIcmCnn;
}

// ---- Caps-EM ----

CapsEmNet make_capsem_net(std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0xCA95));
    CapsEmNet net;
    net.front_conv = make_conv(kObsChannels, 32, 3, 3, 2, 1, rng);
    net.front_bn = make_batch_norm(32);
    net.primary_conv = make_conv(32, 32, 9, 9, 2, 0, rng);
    net.dense_caps = make_dense_caps(196, kCapsuleDim, kOutCapsules, kOutCapsuleDim,
                                     kRoutingIters, rng);
    net.lstm = make_lstm(kOutCapsules * kOutCapsuleDim, kLstmHidden, rng);
    net.policy_w = init_uniform({kActionCount, kLstmHidden}, kLstmHidden, rng);
    net.policy_b = init_uniform({kActionCount}, kLstmHidden, rng);
    net.value_w = init_uniform({1, kLstmHidden}, kLstmHidden, rng);
    net.value_b = init_uniform({1}, kLstmHidden, rng);
    return net;
}

PolicyOutput capsem_forward(const Tensor& obs, const LstmState& state, CapsEmNet& net) {
    check_obs(obs);
    Tensor x = elu(batch_norm(conv2d(obs, net.front_conv), net.front_bn));
    CapsuleBank primary = primary_capsules(x, net.primary_conv, kCapsuleDim);
    if (primary.count != 196)
        throw ConfigError("primary capsule count " + std::to_string(primary.count) + " != 196");
    CapsuleBank routed = dense_capsules(primary, net.dense_caps);
    Tensor flat = reshape(routed.poses, {kOutCapsules * kOutCapsuleDim});
    return heads_forward(flat, state, net.lstm, net.policy_w, net.policy_b, net.value_w,
                         net.value_b);
}

// ---- CNN embedding / baseline ----

CnnEmbedNet make_cnn_embed_net(Rng& rng) {
    CnnEmbedNet net;
    int in_ch = kObsChannels;
    for (int i = 0; i < 4; ++i) {
        net.convs.push_back(make_conv(in_ch, 32, 3, 3, 2, 1, rng));
        net.bns.push_back(make_batch_norm(32));
        in_ch = 32;
    }
    return net;
}

Tensor cnn_embed(const Tensor& obs, CnnEmbedNet& net) {
    check_obs(obs);
    Tensor x = obs;
    for (std::size_t i = 0; i < net.convs.size(); ++i)
        x = elu(batch_norm(conv2d(x, net.convs[i]), net.bns[i]));
    return reshape(x, {kEmbedDim});
}

CnnPolicyNet make_cnn_policy_net(std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0xC44));
    CnnPolicyNet net;
    net.embed = make_cnn_embed_net(rng);
    net.lstm = make_lstm(kEmbedDim, kLstmHidden, rng);
    net.policy_w = init_uniform({kActionCount, kLstmHidden}, kLstmHidden, rng);
    net.policy_b = init_uniform({kActionCount}, kLstmHidden, rng);
    net.value_w = init_uniform({1, kLstmHidden}, kLstmHidden, rng);
    net.value_b = init_uniform({1}, kLstmHidden, rng);
    return net;
}

PolicyOutput cnn_baseline_forward(const Tensor& obs, const LstmState& state, CnnPolicyNet& net) {
    Tensor phi = cnn_embed(obs, net.embed);
    return heads_forward(phi, state, net.lstm, net.policy_w, net.policy_b, net.value_w,
                         net.value_b);
}

// ---- ICM ----

IcmNet make_icm_net(std::uint64_t seed, double eta) {
    if (eta <= 0.0) throw ConfigError("icm eta must be positive");
    Rng rng(Rng::mix(seed, 0x1C4));
    IcmNet net;
    net.embed = make_cnn_embed_net(rng);
    net.fwd_w1 = init_uniform({kIcmHidden, kEmbedDim + kActionCount}, kEmbedDim + kActionCount, rng);
    net.fwd_b1 = init_uniform({kIcmHidden}, kEmbedDim + kActionCount, rng);
    net.fwd_w2 = init_uniform({kEmbedDim, kIcmHidden}, kIcmHidden, rng);
    net.fwd_b2 = init_uniform({kEmbedDim}, kIcmHidden, rng);
    net.inv_w1 = init_uniform({kIcmHidden, 2 * kEmbedDim}, 2 * kEmbedDim, rng);
    net.inv_b1 = init_uniform({kIcmHidden}, 2 * kEmbedDim, rng);
    net.inv_w2 = init_uniform({kActionCount, kIcmHidden}, kIcmHidden, rng);
    net.inv_b2 = init_uniform({kActionCount}, kIcmHidden, rng);
    net.eta = eta;
    return net;
}

IcmOutput icm_intrinsic(const Tensor& phi_t, int action, const Tensor& phi_next, IcmNet& net) {
    if (phi_t.shape() != phi_next.shape() || phi_t.shape() != Shape{kEmbedDim})
        throw ShapeError("icm_intrinsic: embeddings must both be [" + std::to_string(kEmbedDim) +
                         "]");
    if (action < 0 || action >= kActionCount)
        throw ContractError("icm_intrinsic: action out of range");

    Tensor onehot({kActionCount}, 0.0);
    onehot.value()[action] = 1.0;

    // forward model sees detached inputs and a detached target
    Tensor fwd_in = concat(phi_t.detached(), onehot);
    Tensor hidden = elu(linear(fwd_in, net.fwd_w1, net.fwd_b1));
    Tensor phi_pred = linear(hidden, net.fwd_w2, net.fwd_b2);
    Tensor diff = sub(phi_pred, phi_next.detached());
    Tensor fwd_loss = mul(sum(mul(diff, diff)), 0.5);

    Tensor inv_in = concat(phi_t, phi_next);
    Tensor inv_hidden = elu(linear(inv_in, net.inv_w1, net.inv_b1));
    Tensor inv_logits = linear(inv_hidden, net.inv_w2, net.inv_b2);

    IcmOutput out;
    out.r_intrinsic = net.eta * fwd_loss.item();
    out.fwd_loss = fwd_loss;
    out.inv_logits = inv_logits;
    return out;
}

// ---- agent wrapper ----

PolicyOutput AgentNet::forward(const Tensor& obs, const LstmState& state) {
    if (capsem) return capsem_forward(obs, state, *capsem);
    return cnn_baseline_forward(obs, state, *cnn);
}

AgentNet make_agent_net(NetKind kind, std::uint64_t seed, double icm_eta) {
    AgentNet net;
    net.kind = kind;
    net.seed = seed;
    if (kind == NetKind::kCapsEm || kind == NetKind::kCapsEmIr)
        net.capsem = make_capsem_net(seed);
    else
        net.cnn = make_cnn_policy_net(seed);
    if (uses_icm(kind)) net.icm = make_icm_net(seed, icm_eta);
    return net;
}

namespace {

void push_conv(std::vector<NamedParam>& out, const std::string& prefix, const ConvParams& p) {
    out.push_back({prefix + ".weight", p.weights, true});
    out.push_back({prefix + ".bias", p.bias, true});
}

void push_bn(std::vector<NamedParam>& out, const std::string& prefix, const BatchNormParams& p) {
    out.push_back({prefix + ".gamma", p.gamma, true});
    out.push_back({prefix + ".beta", p.beta, true});
    out.push_back({prefix + ".running_mean", p.running_mean, false});
    out.push_back({prefix + ".running_var", p.running_var, false});
}

void push_embed(std::vector<NamedParam>& out, const std::string& prefix, const CnnEmbedNet& e) {
    for (std::size_t i = 0; i < e.convs.size(); ++i) {
        push_conv(out, prefix + ".conv" + std::to_string(i + 1), e.convs[i]);
        push_bn(out, prefix + ".bn" + std::to_string(i + 1), e.bns[i]);
    }
}

}  // namespace

std::vector<NamedParam> AgentNet::params() {
    std::vector<NamedParam> out;
    if (capsem) {
        push_conv(out, "front_conv", capsem->front_conv);
        push_bn(out, "front_bn", capsem->front_bn);
        push_conv(out, "primary_caps", capsem->primary_conv);
        out.push_back({"dense_caps.W", capsem->dense_caps.W, true});
        out.push_back({"lstm.weight", capsem->lstm.W, true});
        out.push_back({"lstm.bias", capsem->lstm.b, true});
        out.push_back({"policy_head.weight", capsem->policy_w, true});
        out.push_back({"policy_head.bias", capsem->policy_b, true});
        out.push_back({"value_head.weight", capsem->value_w, true});
        out.push_back({"value_head.bias", capsem->value_b, true});
    }
    if (cnn) {
        push_embed(out, "embed", cnn->embed);
        out.push_back({"lstm.weight", cnn->lstm.W, true});
        out.push_back({"lstm.bias", cnn->lstm.b, true});
        out.push_back({"policy_head.weight", cnn->policy_w, true});
        out.push_back({"policy_head.bias", cnn->policy_b, true});
        out.push_back({"value_head.weight", cnn->value_w, true});
        out.push_back({"value_head.bias", cnn->value_b, true});
    }
    if (icm) {
        push_embed(out, "icm.embed", icm->embed);
        out.push_back({"icm.forward.w1", icm->fwd_w1, true});
        out.push_back({"icm.forward.b1", icm->fwd_b1, true});
        out.push_back({"icm.forward.w2", icm->fwd_w2, true});
        out.push_back({"icm.forward.b2", icm->fwd_b2, true});
        out.push_back({"icm.inverse.w1", icm->inv_w1, true});
        out.push_back({"icm.inverse.b1", icm->inv_b1, true});
        out.push_back({"icm.inverse.w2", icm->inv_w2, true});
        out.push_back({"icm.inverse.b2", icm->inv_b2, true});
    }
    return out;
}

std::int64_t param_count(const std::vector<NamedParam>& params) {
    std::int64_t total = 0;
    for (const NamedParam& p : params)
        if (p.trainable) total += p.tensor.numel();
    return total;
}

std::vector<LayerCount> layer_counts(const std::vector<NamedParam>& params) {
    std::vector<LayerCount> out;
    for (const NamedParam& p : params) {
        if (!p.trainable) continue;
        std::string layer = p.name.substr(0, p.name.find('.'));
        if (p.name.rfind("icm.", 0) == 0) {
            // keep the icm submodule visible: icm.embed, icm.forward, ...
            std::size_t second = p.name.find('.', 4);
            layer = p.name.substr(0, second);
        }
        if (!out.empty() && out.back().layer == layer)
            out.back().count += p.tensor.numel();
        else
            out.push_back({layer, p.tensor.numel()});
    }
    return out;
}

// ---- checkpointing ----

namespace {

constexpr char kMagic[8] = {'C', 'P', 'N', 'A', 'V', 'C', 'K', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

nlohmann::json manifest_for(AgentNet& net) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const NamedParam& p : net.params()) {
        tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()},
                           {"trainable", p.trainable}});
    }
    return nlohmann::json{{"format", "capsnav-checkpoint"},
                          {"version", 1},
                          {"net_kind", to_string(net.kind)},
                          {"seed", net.seed},
                          {"icm_eta", net.icm ? net.icm->eta : 0.0},
                          {"tensors", tensors}};
}

nlohmann::json read_manifest(std::istream& is, const std::string& path) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw LoadError("not a capsnav checkpoint: " + path);
    std::uint64_t len = read_u64(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw LoadError("truncated checkpoint manifest: " + path);
    nlohmann::json m = nlohmann::json::parse(text, nullptr, false);
    if (m.is_discarded()) throw LoadError("corrupt checkpoint manifest: " + path);
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, AgentNet& net) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw LoadError("cannot open checkpoint for writing: " + path);
    std::string manifest = manifest_for(net).dump();
    os.write(kMagic, 8);
    write_u64(os, manifest.size());
    os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    for (const NamedParam& p : net.params()) {
        const auto& v = p.tensor.value();
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!os) throw LoadError("checkpoint write failed: " + path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open checkpoint: " + path);
    nlohmann::json m = read_manifest(is, path);
    CheckpointInfo info;
    info.kind = net_kind_from_string(m.at("net_kind").get<std::string>());
    info.seed = m.at("seed").get<std::uint64_t>();
    info.icm_eta = m.value("icm_eta", 0.0);
    return info;
}

void curriculum_load(const std::string& path, AgentNet& net) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open checkpoint: " + path);
    nlohmann::json m = read_manifest(is, path);

    std::vector<NamedParam> target = net.params();
    std::size_t idx = 0;
    std::string mismatches;
    for (const auto& entry : m.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        if (idx >= target.size() || target[idx].name != name ||
            target[idx].tensor.shape() != shape) {
            std::string want = idx < target.size()
                                   ? target[idx].name + shape_str(target[idx].tensor.shape())
                                   : "<none>";
            mismatches += "\n  checkpoint has " + name + shape_str(shape) + ", net expects " + want;
        }
        ++idx;
    }
    if (idx != target.size())
        mismatches += "\n  checkpoint holds " + std::to_string(idx) + " arrays, net expects " +
                      std::to_string(target.size());
    if (!mismatches.empty())
        throw LoadError("checkpoint does not match network architecture:" + mismatches);

    for (NamedParam& p : target) {
        auto& v = p.tensor.value();
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!is) throw LoadError("truncated checkpoint data: " + path);
    }
}

AgentNet load_agent_checkpoint(const std::string& path) {
    CheckpointInfo info = read_checkpoint_info(path);
    AgentNet net = make_agent_net(info.kind, info.seed,
                                  info.icm_eta > 0.0 ? info.icm_eta : 0.01);
    curriculum_load(path, net);
    return net;
}

}  // namespace capsnav
