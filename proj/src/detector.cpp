#include "tsap/detector.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "tsap/error.hpp"
#include "tsap/serialize.hpp"
#include "tsap/synth.hpp"

namespace tsap {

namespace {

using nlohmann::json;

constexpr std::size_t kScoreBatch = 256;

std::vector<std::size_t> range_index(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  return idx;
}

}  // namespace

std::vector<std::size_t> DetectorArch::encoder_lengths() const {
  std::vector<std::size_t> out;
  std::size_t len = K;
  for (const auto& c : encoder) out.push_back(len = conv_out_len(len, c.kernel, c.stride, c.dilation));
  return out;
}

std::size_t DetectorArch::pooled_length() const {
  return conv_out_len(encoder_lengths().back(), pool_kernel, pool_stride);
}

void DetectorArch::validate() const {
  if (encoder.empty()) throw ShapeError("detector needs at least one conv stage");
  if (encoder.front().in != 1) throw ShapeError("detector input is univariate");
  for (std::size_t i = 1; i < encoder.size(); ++i)
    if (encoder[i].in != encoder[i - 1].out) throw ShapeError("detector channels do not chain");
  if (embed_dim == 0) throw ShapeError("embedding dimension must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("dropout must lie in [0, 1)");
  (void)flat_dim();  // throws if a stage collapses the length
}

std::string DetectorArch::manifest() const {
  json j{{"model", "f_det"},           {"K", K},
         {"pool_kernel", pool_kernel}, {"pool_stride", pool_stride},
         {"embed_dim", embed_dim},     {"dropout", dropout}};
  for (const auto& c : encoder)
    j["encoder"].push_back({{"in", c.in},
                            {"out", c.out},
                            {"kernel", c.kernel},
                            {"stride", c.stride},
                            {"dilation", c.dilation},
                            {"relu", c.relu},
                            {"batchnorm", c.batchnorm}});
  return j.dump();
}

DetectorArch DetectorArch::desk(std::size_t K) {
  DetectorArch a;
  a.K = K;
  a.encoder = {{1, 32, 5, 2, 1, 0, true, true}, {32, 16, 5, 2, 2, 0, true, false},
               {16, 8, 5, 4, 4, 0, true, false}};
  a.pool_kernel = 2;
  a.pool_stride = 2;
  a.validate();
  return a;
}

DetectorArch DetectorArch::paper(std::size_t K) {
  DetectorArch a;
  a.K = K;
  a.encoder = {{1, 32, 10, 2, 1, 0, true, true}, {32, 16, 10, 2, 2, 0, true, false},
               {16, 8, 10, 4, 4, 0, true, false}};
  a.pool_kernel = 10;
  a.pool_stride = 3;
  a.validate();
  return a;
}

Detector::Detector(DetectorArch arch, std::uint64_t seed) : arch_(std::move(arch)), params_(seed) {
  arch_.validate();
  Rng rng = Rng::stream(seed, {0xde});
  for (std::size_t i = 0; i < arch_.encoder.size(); ++i) {
    const ConvSpec& c = arch_.encoder[i];
    const std::string p = "enc" + std::to_string(i);
    params_.add(p + ".w", init_uniform_fan_in({c.out, c.in, c.kernel}, c.in * c.kernel, rng));
    params_.add(p + ".b", init_uniform_fan_in({c.out}, c.in * c.kernel, rng));
    if (c.batchnorm) {
      params_.add(p + ".bn.gamma", Tensor({c.out}, 1.0));
      params_.add(p + ".bn.beta", Tensor({c.out}, 0.0));
      params_.add(p + ".bn.mean", Tensor({c.out}, 0.0), false);
      params_.add(p + ".bn.var", Tensor({c.out}, 1.0), false);
    }
  }
  const std::size_t flat = arch_.flat_dim();
  params_.add("emb.w", init_uniform_fan_in({arch_.embed_dim, flat}, flat, rng));
  params_.add("emb.b", init_uniform_fan_in({arch_.embed_dim}, flat, rng));
  params_.add("head.w", init_uniform_fan_in({1, arch_.embed_dim}, arch_.embed_dim, rng));
  params_.add("head.b", init_uniform_fan_in({1}, arch_.embed_dim, rng));
}

void Detector::save(const std::filesystem::path& path, const std::string& metadata) const {
  save_params(path, params_, manifest(), metadata);
}

Detector Detector::load(const std::filesystem::path& path, const DetectorArch& arch,
                        std::string* metadata) {
  Detector d(arch, 0);
  load_params(path, d.params_, d.manifest(), metadata);
  return d;
}

Var detector_embed(const DetectorArch& arch, const ParamSet& theta, const Var& x, bool train) {
  if (x.shape().size() != 3 || x.shape()[1] != 1 || x.shape()[2] != arch.K)
    throw ShapeError("detector input must be [B, 1, " + std::to_string(arch.K) + "], got " +
                     shape_str(x.shape()));
  Var h = x;
  for (std::size_t i = 0; i < arch.encoder.size(); ++i) {
    const ConvSpec& c = arch.encoder[i];
    const std::string p = "enc" + std::to_string(i);
    h = conv1d(h, theta[p + ".w"], theta[p + ".b"], c.stride, c.dilation);
    if (c.relu) h = relu(h);
    if (c.batchnorm) {
      BatchNormState st{theta[p + ".bn.mean"], theta[p + ".bn.var"]};
      h = batchnorm1d(h, theta[p + ".bn.gamma"], theta[p + ".bn.beta"], st, train);
    }
  }
  h = flatten(avgpool1d(h, arch.pool_kernel, arch.pool_stride));
  return linear(h, theta["emb.w"], theta["emb.b"]);
}

Var detector_logits(const DetectorArch& arch, const ParamSet& theta, const Var& emb,
                    Rng* dropout_rng) {
  Var h = emb;
  if (dropout_rng && arch.dropout > 0.0) h = dropout(h, 1.0 - arch.dropout, *dropout_rng);
  Var z = linear(h, theta["head.w"], theta["head.b"]);
  return reshape(z, {z.shape()[0]});
}

Var bce_with_logits(const Var& logits, const Tensor& labels) {
  if (logits.shape() != labels.shape()) throw ShapeError("bce: logits and labels differ in shape");
  // softplus(z) - y z  ==  -[y log s(z) + (1 - y) log(1 - s(z))]
  return mean(sub(softplus(logits), mul(logits, Var::constant(labels))));
}

Var detector_loss(const DetectorArch& arch, const ParamSet& theta, const Var& x_trn,
                  const Var& x_aug, Rng* dropout_rng) {
  const std::size_t n0 = x_trn.shape()[0], n1 = x_aug.shape()[0];
  Var emb = detector_embed(arch, theta, concat_rows({x_trn, x_aug}), true);
  Var z = detector_logits(arch, theta, emb, dropout_rng);
  Tensor y({n0 + n1});
  for (std::size_t i = n0; i < n0 + n1; ++i) y[i] = 1.0;
  return bce_with_logits(z, y);
}

double detect_epoch(const Detector& det, const std::vector<Series>& trn,
                    const std::vector<Series>& aug, AdamState& opt, std::size_t batch,
                    std::uint64_t seed) {
  if (trn.size() != aug.size()) throw InvalidParams("detect_epoch: trn and aug differ in size");
  if (batch == 0) throw InvalidParams("batch size must be positive");
  Rng order_rng = Rng::stream(seed, {0xd0});
  std::vector<std::size_t> order = order_rng.permutation(trn.size());
  const std::vector<std::string> names = det.params().trainable_names();
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch)));
    Rng drop = Rng::stream(seed, {0xd1, start});
    Var loss = detector_loss(det.arch(), det.params(), Var::constant(stack_series(trn, idx)),
                             Var::constant(stack_series(aug, idx)), &drop);
    if (!std::isfinite(loss.item())) throw NumericError("detector loss is not finite");
    std::vector<Var> params = det.params().trainable();
    adam_step(params, grad(loss, params), opt, names);
    total += loss.item();
    ++batches;
  }
  return total / static_cast<double>(batches);
}

Tensor embed_all(const DetectorArch& arch, const ParamSet& theta, const std::vector<Series>& rows) {
  NoGradGuard no_grad;
  std::vector<double> out;
  for (std::size_t start = 0; start < rows.size(); start += kScoreBatch) {
    Var e = detector_embed(arch, theta,
                           Var::constant(stack_series(rows, range_index(start, std::min(rows.size(), start + kScoreBatch)))),
                           false);
    out.insert(out.end(), e.value().vec().begin(), e.value().vec().end());
  }
  return Tensor({rows.size(), arch.embed_dim}, std::move(out));
}

std::vector<double> anomaly_logits(const DetectorArch& arch, const ParamSet& theta,
                                   const std::vector<Series>& rows) {
  NoGradGuard no_grad;
  Tensor emb = embed_all(arch, theta, rows);
  return detector_logits(arch, theta, Var::constant(emb)).value().vec();
}

std::vector<double> anomaly_score(const DetectorArch& arch, const ParamSet& theta,
                                  const std::vector<Series>& rows) {
  std::vector<double> s = anomaly_logits(arch, theta, rows);
  for (double& z : s) z = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return s;
}

}  // namespace tsap
