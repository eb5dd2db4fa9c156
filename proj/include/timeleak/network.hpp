#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "timeleak/dataset.hpp"
#include "timeleak/error.hpp"
#include "timeleak/random.hpp"
#include "timeleak/schema.hpp"

namespace timeleak {

/// Interface valuation; element i is the bit of interface neuron i.
using Bits = std::vector<std::uint8_t>;

struct Architecture {
  std::size_t n_secret = 0;
  std::size_t n_public = 0;
  std::size_t k = 0;
  std::vector<std::size_t> secret_widths;
  std::vector<std::size_t> public_widths;
  std::vector<std::size_t> joint_widths;

  std::size_t public_output_dim() const { return public_widths.empty() ? n_public : public_widths.back(); }
  std::size_t joint_input_dim() const { return k + public_output_dim(); }

  void validate() const {
    auto positive = [](const std::vector<std::size_t>& widths, const char* branch) {
      for (auto w : widths)
        if (w == 0) throw Error(ErrorCode::kInvalidArgument, std::string(branch) + " branch has a zero-width layer");
    };
    positive(secret_widths, "secret");
    positive(public_widths, "public");
    positive(joint_widths, "joint");
    if (k > 0 && n_secret == 0) throw Error(ErrorCode::kInvalidArgument, "k > 0 requires secret inputs");
    if (k > 30) throw Error(ErrorCode::kInvalidArgument, "interface width above 30 bits is not supported");
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// y = W x + b; W is (out x in).
struct DenseLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }

  static DenseLayer zeros(std::size_t in, std::size_t out) {
    return {Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
            Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))};
  }
};

/// Secret branch ending in the k-bit interface, public branch, and a joint
/// branch that sees the secret side only through the interface bits.
struct TriBranchNetwork {
  Architecture arch;
  std::vector<DenseLayer> secret_hidden;
  DenseLayer interface;  // k outputs; empty when k == 0
  std::vector<DenseLayer> public_hidden;
  std::vector<DenseLayer> joint;  // hidden layers followed by the scalar output layer
  Normalizer normalizer;
  FeatureSchema schema;
  std::uint64_t seed = 0;
  nlohmann::json metrics = nlohmann::json::object();

  /// Canonical parameter order shared by gradients and optimizer state.
  std::vector<DenseLayer*> layers() {
    std::vector<DenseLayer*> out;
    for (auto& l : secret_hidden) out.push_back(&l);
    if (arch.k > 0) out.push_back(&interface);
    for (auto& l : public_hidden) out.push_back(&l);
    for (auto& l : joint) out.push_back(&l);
    return out;
  }

  std::vector<const DenseLayer*> layers() const {
    std::vector<const DenseLayer*> out;
    for (const auto& l : secret_hidden) out.push_back(&l);
    if (arch.k > 0) out.push_back(&interface);
    for (const auto& l : public_hidden) out.push_back(&l);
    for (const auto& l : joint) out.push_back(&l);
    return out;
  }

  /// Number of layers whose gradient flows through the interface threshold.
  std::size_t secret_layer_count() const { return arch.k > 0 ? secret_hidden.size() + 1 : 0; }
};

/// Per-layer gradients in `TriBranchNetwork::layers()` order.
using Gradients = std::vector<DenseLayer>;

inline Gradients zero_like(const TriBranchNetwork& net) {
  Gradients grads;
  for (const auto* layer : net.layers()) grads.push_back(DenseLayer::zeros(layer->in_dim(), layer->out_dim()));
  return grads;
}

/// He-style uniform initialisation, U(-sqrt(6/fan_in), sqrt(6/fan_in)),
/// zero biases. Draws are row-major in canonical layer order.
inline TriBranchNetwork init_network(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  TriBranchNetwork net;
  net.arch = arch;
  net.seed = seed;

  auto make = [](std::size_t in, std::size_t out) { return DenseLayer::zeros(in, out); };
  if (arch.k > 0) {
    std::size_t in = arch.n_secret;
    for (auto w : arch.secret_widths) {
      net.secret_hidden.push_back(make(in, w));
      in = w;
    }
    net.interface = make(in, arch.k);
  }
  std::size_t in = arch.n_public;
  for (auto w : arch.public_widths) {
    net.public_hidden.push_back(make(in, w));
    in = w;
  }
  in = arch.joint_input_dim();
  for (auto w : arch.joint_widths) {
    net.joint.push_back(make(in, w));
    in = w;
  }
  net.joint.push_back(make(in, 1));

  Rng rng(seed);
  for (auto* layer : net.layers()) {
    const double limit = layer->in_dim() > 0 ? std::sqrt(6.0 / static_cast<double>(layer->in_dim())) : 0.0;
    for (Eigen::Index i = 0; i < layer->weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer->weight.cols(); ++j) layer->weight(i, j) = rng.uniform(-limit, limit);
  }
  return net;
}

/// Hard threshold shared with the counter: preact >= 0 maps to 1.
inline Bits binarize(std::span<const double> preact) {
  Bits bits(preact.size());
  for (std::size_t i = 0; i < preact.size(); ++i) bits[i] = preact[i] >= 0.0 ? 1 : 0;
  return bits;
}

namespace detail {

/// Fixed summation order so the reducer and the network agree bit-for-bit.
inline std::vector<double> affine(const DenseLayer& layer, std::span<const double> in) {
  std::vector<double> out(layer.out_dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = layer.bias(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < in.size(); ++j)
      acc += layer.weight(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * in[j];
    out[i] = acc;
  }
  return out;
}

inline void relu_inplace(std::vector<double>& v) {
  for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

}  // namespace detail

/// Interface pre-activations for a normalized secret vector.
inline std::vector<double> interface_preacts(const std::vector<DenseLayer>& hidden, const DenseLayer& interface,
                                             std::span<const double> x) {
  std::vector<double> act(x.begin(), x.end());
  for (const auto& layer : hidden) {
    act = detail::affine(layer, act);
    detail::relu_inplace(act);
  }
  return detail::affine(interface, act);
}

struct ForwardResult {
  double time = 0.0;  // normalized
  Bits bits;
};

/// Single-sample forward pass on normalized inputs.
inline ForwardResult forward(const TriBranchNetwork& net, std::span<const double> x, std::span<const double> y) {
  if (x.size() != net.arch.n_secret || y.size() != net.arch.n_public)
    throw Error(ErrorCode::kDimensionMismatch, "expected " + std::to_string(net.arch.n_secret) + " secret and " +
                                                   std::to_string(net.arch.n_public) + " public inputs");
  ForwardResult result;
  if (net.arch.k > 0) result.bits = binarize(interface_preacts(net.secret_hidden, net.interface, x));

  std::vector<double> pub(y.begin(), y.end());
  for (const auto& layer : net.public_hidden) {
    pub = detail::affine(layer, pub);
    detail::relu_inplace(pub);
  }
  std::vector<double> act(result.bits.begin(), result.bits.end());
  act.insert(act.end(), pub.begin(), pub.end());
  for (std::size_t l = 0; l < net.joint.size(); ++l) {
    act = detail::affine(net.joint[l], act);
    if (l + 1 < net.joint.size()) detail::relu_inplace(act);
  }
  result.time = act.front();
  return result;
}

/// Column-per-sample view of normalized rows.
struct Batch {
  Eigen::MatrixXd secret;  // n x B
  Eigen::MatrixXd pub;     // m x B
  Eigen::RowVectorXd time;

  Eigen::Index size() const { return time.size(); }
};

inline Batch make_batch(const TraceDataset& normalized, std::span<const std::size_t> indices) {
  const auto n = static_cast<Eigen::Index>(normalized.schema.n_secret());
  const auto m = static_cast<Eigen::Index>(normalized.schema.n_public());
  const auto b = static_cast<Eigen::Index>(indices.size());
  Batch batch{Eigen::MatrixXd(n, b), Eigen::MatrixXd(m, b), Eigen::RowVectorXd(b)};
  for (Eigen::Index c = 0; c < b; ++c) {
    const auto& row = normalized.rows[indices[static_cast<std::size_t>(c)]];
    for (Eigen::Index j = 0; j < n; ++j) batch.secret(j, c) = row.secret[static_cast<std::size_t>(j)];
    for (Eigen::Index j = 0; j < m; ++j) batch.pub(j, c) = row.pub[static_cast<std::size_t>(j)];
    batch.time(c) = row.time;
  }
  return batch;
}

inline Batch make_batch(const TraceDataset& normalized) {
  std::vector<std::size_t> all(normalized.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(normalized, all);
}

namespace detail {

struct BatchTrace {
  std::vector<Eigen::MatrixXd> secret_pre, secret_act;  // per secret hidden layer
  Eigen::MatrixXd interface_pre;
  std::vector<Eigen::MatrixXd> public_pre, public_act;
  std::vector<Eigen::MatrixXd> joint_pre, joint_act;  // joint_act[0] is the joint input
  Eigen::RowVectorXd output;
};

inline Eigen::MatrixXd apply_layer(const DenseLayer& layer, const Eigen::MatrixXd& in) {
  return (layer.weight * in).colwise() + layer.bias;
}

inline BatchTrace forward_batch(const TriBranchNetwork& net, const Batch& batch) {
  if (static_cast<std::size_t>(batch.secret.rows()) != net.arch.n_secret ||
      static_cast<std::size_t>(batch.pub.rows()) != net.arch.n_public)
    throw Error(ErrorCode::kDimensionMismatch, "batch does not match network inputs");
  BatchTrace tr;
  const auto b = batch.size();
  Eigen::MatrixXd bits(static_cast<Eigen::Index>(net.arch.k), b);
  if (net.arch.k > 0) {
    Eigen::MatrixXd act = batch.secret;
    for (const auto& layer : net.secret_hidden) {
      tr.secret_pre.push_back(apply_layer(layer, act));
      act = tr.secret_pre.back().cwiseMax(0.0);
      tr.secret_act.push_back(act);
    }
    tr.interface_pre = apply_layer(net.interface, act);
    bits = (tr.interface_pre.array() >= 0.0).cast<double>().matrix();
  }
  Eigen::MatrixXd pub = batch.pub;
  for (const auto& layer : net.public_hidden) {
    tr.public_pre.push_back(apply_layer(layer, pub));
    pub = tr.public_pre.back().cwiseMax(0.0);
    tr.public_act.push_back(pub);
  }
  Eigen::MatrixXd act(bits.rows() + pub.rows(), b);
  act.topRows(bits.rows()) = bits;
  act.bottomRows(pub.rows()) = pub;
  tr.joint_act.push_back(act);
  for (std::size_t l = 0; l < net.joint.size(); ++l) {
    tr.joint_pre.push_back(apply_layer(net.joint[l], act));
    act = l + 1 < net.joint.size() ? tr.joint_pre.back().cwiseMax(0.0) : tr.joint_pre.back();
    tr.joint_act.push_back(act);
  }
  tr.output = act.row(0);
  return tr;
}

}  // namespace detail

/// Normalized predictions for every column of `batch`.
inline Eigen::RowVectorXd predict(const TriBranchNetwork& net, const Batch& batch) {
  return detail::forward_batch(net, batch).output;
}

struct LossAndGradients {
  double mse = 0.0;
  Gradients grads;
};

/// Mean squared error and its gradient. The interface threshold is crossed
/// backwards with the straight-through rule: the incoming gradient passes
/// unchanged where |preact| <= ste_clip and is zeroed elsewhere.
inline LossAndGradients loss_and_gradients(const TriBranchNetwork& net, const Batch& batch, double ste_clip) {
  if (batch.size() == 0) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  const auto tr = detail::forward_batch(net, batch);
  const Eigen::RowVectorXd residual = tr.output - batch.time;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  LossAndGradients out;
  out.mse = residual.squaredNorm() * inv_b;
  if (!std::isfinite(out.mse)) throw Error(ErrorCode::kNonFiniteLoss, "loss is not finite");
  out.grads = zero_like(net);

  const std::size_t joint_offset = net.secret_layer_count() + net.public_hidden.size();
  Eigen::MatrixXd delta = 2.0 * inv_b * residual;  // d loss / d joint output preact
  for (std::size_t l = net.joint.size(); l-- > 0;) {
    auto& g = out.grads[joint_offset + l];
    g.weight = delta * tr.joint_act[l].transpose();
    g.bias = delta.rowwise().sum();
    delta = net.joint[l].weight.transpose() * delta;
    if (l > 0) delta = delta.cwiseProduct((tr.joint_pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
  const auto k = static_cast<Eigen::Index>(net.arch.k);
  Eigen::MatrixXd d_pub = delta.bottomRows(delta.rows() - k);
  Eigen::MatrixXd d_bits = delta.topRows(k);

  const std::size_t public_offset = net.secret_layer_count();
  for (std::size_t l = net.public_hidden.size(); l-- > 0;) {
    d_pub = d_pub.cwiseProduct((tr.public_pre[l].array() > 0.0).cast<double>().matrix());
    auto& g = out.grads[public_offset + l];
    const Eigen::MatrixXd& input = l > 0 ? tr.public_act[l - 1] : batch.pub;
    g.weight = d_pub * input.transpose();
    g.bias = d_pub.rowwise().sum();
    d_pub = net.public_hidden[l].weight.transpose() * d_pub;
  }

  if (k > 0) {
    Eigen::MatrixXd d = d_bits.cwiseProduct((tr.interface_pre.array().abs() <= ste_clip).cast<double>().matrix());
    const std::size_t iface = net.secret_hidden.size();
    const Eigen::MatrixXd& iface_in = iface > 0 ? tr.secret_act.back() : batch.secret;
    out.grads[iface].weight = d * iface_in.transpose();
    out.grads[iface].bias = d.rowwise().sum();
    d = net.interface.weight.transpose() * d;
    for (std::size_t l = net.secret_hidden.size(); l-- > 0;) {
      d = d.cwiseProduct((tr.secret_pre[l].array() > 0.0).cast<double>().matrix());
      const Eigen::MatrixXd& input = l > 0 ? tr.secret_act[l - 1] : batch.secret;
      out.grads[l].weight = d * input.transpose();
      out.grads[l].bias = d.rowwise().sum();
      d = net.secret_hidden[l].weight.transpose() * d;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json layer_to_json(const DenseLayer& layer) {
  nlohmann::json weight = nlohmann::json::array();
  for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) row.push_back(layer.weight(i, j));
    weight.push_back(std::move(row));
  }
  nlohmann::json bias = nlohmann::json::array();
  for (Eigen::Index i = 0; i < layer.bias.size(); ++i) bias.push_back(layer.bias(i));
  return {{"weight", weight}, {"bias", bias}};
}

inline DenseLayer layer_from_json(const nlohmann::json& doc, std::size_t in, std::size_t out) {
  DenseLayer layer = DenseLayer::zeros(in, out);
  const auto& weight = doc.at("weight");
  const auto& bias = doc.at("bias");
  if (weight.size() != out || bias.size() != out) throw Error(ErrorCode::kParseError, "layer shape mismatch");
  for (std::size_t i = 0; i < out; ++i) {
    if (weight[i].size() != in) throw Error(ErrorCode::kParseError, "layer shape mismatch");
    for (std::size_t j = 0; j < in; ++j)
      layer.weight(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = weight[i][j].get<double>();
    layer.bias(static_cast<Eigen::Index>(i)) = bias[i].get<double>();
  }
  return layer;
}

}  // namespace detail

inline nlohmann::json to_json(const Architecture& arch) {
  return {{"n_secret", arch.n_secret},           {"n_public", arch.n_public},
          {"k", arch.k},                         {"secret_widths", arch.secret_widths},
          {"public_widths", arch.public_widths}, {"joint_widths", arch.joint_widths}};
}

inline Architecture architecture_from_json(const nlohmann::json& doc) {
  Architecture arch;
  arch.n_secret = doc.at("n_secret").get<std::size_t>();
  arch.n_public = doc.at("n_public").get<std::size_t>();
  arch.k = doc.at("k").get<std::size_t>();
  arch.secret_widths = doc.at("secret_widths").get<std::vector<std::size_t>>();
  arch.public_widths = doc.at("public_widths").get<std::vector<std::size_t>>();
  arch.joint_widths = doc.at("joint_widths").get<std::vector<std::size_t>>();
  arch.validate();
  return arch;
}

inline nlohmann::json to_json(const TriBranchNetwork& net) {
  auto list = [](const std::vector<DenseLayer>& layers) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& l : layers) out.push_back(detail::layer_to_json(l));
    return out;
  };
  nlohmann::json doc;
  doc["format"] = "timeleak-model";
  doc["version"] = kModelFormatVersion;
  doc["architecture"] = to_json(net.arch);
  doc["layers"] = {{"secret", list(net.secret_hidden)},
                   {"interface", net.arch.k > 0 ? detail::layer_to_json(net.interface) : nlohmann::json(nullptr)},
                   {"public", list(net.public_hidden)},
                   {"joint", list(net.joint)}};
  doc["normalizer"] = to_json(net.normalizer);
  doc["schema"] = to_json(net.schema);
  doc["seed"] = net.seed;
  doc["metrics"] = net.metrics;
  return doc;
}

/// Either a fully consistent network or an exception; never a partial model.
inline TriBranchNetwork network_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "timeleak-model")
    throw Error(ErrorCode::kSchemaVersionMismatch, "not a timeleak model document");
  if (doc.value("version", -1) != kModelFormatVersion)
    throw Error(ErrorCode::kSchemaVersionMismatch, "unsupported model version " + doc.value("version", nlohmann::json()).dump());
  try {
    TriBranchNetwork net;
    net.arch = architecture_from_json(doc.at("architecture"));
    const auto& layers = doc.at("layers");
    const auto& arch = net.arch;
    auto read_stack = [](const nlohmann::json& list, std::size_t in, const std::vector<std::size_t>& widths) {
      if (list.size() != widths.size()) throw Error(ErrorCode::kParseError, "layer count mismatch");
      std::vector<DenseLayer> out;
      for (std::size_t l = 0; l < widths.size(); ++l) {
        out.push_back(detail::layer_from_json(list[l], in, widths[l]));
        in = widths[l];
      }
      return out;
    };
    if (arch.k > 0) {
      net.secret_hidden = read_stack(layers.at("secret"), arch.n_secret, arch.secret_widths);
      const auto iface_in = arch.secret_widths.empty() ? arch.n_secret : arch.secret_widths.back();
      net.interface = detail::layer_from_json(layers.at("interface"), iface_in, arch.k);
    } else if (!layers.at("secret").empty()) {
      throw Error(ErrorCode::kParseError, "k = 0 model carries secret-branch weights");
    }
    net.public_hidden = read_stack(layers.at("public"), arch.n_public, arch.public_widths);
    auto joint_widths = arch.joint_widths;
    joint_widths.push_back(1);
    net.joint = read_stack(layers.at("joint"), arch.joint_input_dim(), joint_widths);
    net.normalizer = normalizer_from_json(doc.at("normalizer"));
    net.schema = schema_from_json(doc.at("schema"));
    if (net.schema.n_secret() != arch.n_secret || net.schema.n_public() != arch.n_public ||
        net.normalizer.secret.size() != arch.n_secret || net.normalizer.pub.size() != arch.n_public)
      throw Error(ErrorCode::kParseError, "schema or normalizer disagrees with architecture");
    net.seed = doc.at("seed").get<std::uint64_t>();
    net.metrics = doc.value("metrics", nlohmann::json::object());
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

inline void save_network(const TriBranchNetwork& net, const std::filesystem::path& path) {
  detail::write_file(path, to_json(net).dump(1) + "\n");
}

inline TriBranchNetwork load_network(const std::filesystem::path& path) {
  return network_from_json(detail::read_json(path));
}

}  // namespace timeleak
