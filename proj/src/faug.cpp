#include "tsap/faug.hpp"

#include <cmath>

#include "json.hpp"
#include "tsap/adam.hpp"
#include "tsap/error.hpp"
#include "tsap/serialize.hpp"
#include "tsap/synth.hpp"

namespace tsap {

namespace {

using nlohmann::json;

json conv_json(const ConvSpec& c) {
  return json{{"in", c.in},           {"out", c.out},           {"kernel", c.kernel},
              {"stride", c.stride},   {"dilation", c.dilation}, {"output_padding", c.output_padding},
              {"relu", c.relu},       {"batchnorm", c.batchnorm}};
}

json interval_json(const Interval& iv) { return json::array({iv.lo, iv.hi}); }
Interval interval_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

void add_batchnorm(ParamSet& p, const std::string& prefix, std::size_t channels) {
  p.add(prefix + ".gamma", Tensor({channels}, 1.0));
  p.add(prefix + ".beta", Tensor({channels}, 0.0));
  p.add(prefix + ".mean", Tensor({channels}, 0.0), false);
  p.add(prefix + ".var", Tensor({channels}, 1.0), false);
}

Var apply_batchnorm(const ParamSet& p, const std::string& prefix, const Var& x, bool train) {
  BatchNormState st{p[prefix + ".mean"], p[prefix + ".var"]};
  return batchnorm1d(x, p[prefix + ".gamma"], p[prefix + ".beta"], st, train);
}

Var post_conv(const ParamSet& p, const std::string& prefix, const ConvSpec& c, Var y, bool train) {
  if (c.relu) y = relu(y);
  if (c.batchnorm) y = apply_batchnorm(p, prefix + ".bn", y, train);
  return y;
}

}  // namespace

std::vector<std::size_t> FaugArch::encoder_lengths() const {
  std::vector<std::size_t> out;
  std::size_t len = K;
  for (const auto& c : encoder) out.push_back(len = conv_out_len(len, c.kernel, c.stride, c.dilation));
  return out;
}

std::vector<std::size_t> FaugArch::decoder_lengths() const {
  std::vector<std::size_t> out;
  std::size_t len = encoder_lengths().back();
  for (const auto& c : decoder)
    out.push_back(len = conv_transposed_out_len(len, c.kernel, c.stride) + c.output_padding);
  return out;
}

void FaugArch::validate() const {
  if (encoder.empty() || decoder.empty()) throw ShapeError("f_aug needs encoder and decoder stages");
  if (encoder.front().in != 1 || decoder.back().out != 1)
    throw ShapeError("f_aug maps univariate series to univariate series");
  for (std::size_t i = 1; i < encoder.size(); ++i)
    if (encoder[i].in != encoder[i - 1].out) throw ShapeError("f_aug encoder channels do not chain");
  if (decoder.front().in != encoder.back().out) throw ShapeError("f_aug decoder input channels differ from latent");
  for (std::size_t i = 1; i < decoder.size(); ++i)
    if (decoder[i].in != decoder[i - 1].out) throw ShapeError("f_aug decoder channels do not chain");
  for (const auto& c : decoder)
    if (c.output_padding >= c.stride || c.dilation != 1)
      throw ShapeError("f_aug decoder stage needs output_padding < stride and no dilation");
  if (decoder_lengths().back() != K)
    throw ShapeError("f_aug decoder returns length " + std::to_string(decoder_lengths().back()) +
                     ", expected K = " + std::to_string(K));
}

std::string FaugArch::manifest() const {
  json j{{"model", "f_aug"}, {"K", K}, {"mlp_hidden", mlp_hidden}};
  for (const auto& c : encoder) j["encoder"].push_back(conv_json(c));
  for (const auto& c : decoder) j["decoder"].push_back(conv_json(c));
  return j.dump();
}

FaugArch FaugArch::mirrored(std::size_t K, std::size_t channels, std::size_t kernel,
                            std::size_t stride) {
  FaugArch a;
  a.K = K;
  a.encoder = {{1, channels, kernel, stride, 1, 0, true, true},
               {channels, channels, kernel, stride, 1, 0, true, false}};
  const std::vector<std::size_t> lens = a.encoder_lengths();  // [L1, L2]
  const std::size_t targets[2] = {lens[0], K};
  std::size_t len = lens[1];
  for (int i = 0; i < 2; ++i) {
    const std::size_t base = conv_transposed_out_len(len, kernel, stride);
    if (targets[i] < base || targets[i] - base >= stride)
      throw ShapeError("no output padding maps length " + std::to_string(len) + " to " +
                       std::to_string(targets[i]));
    ConvSpec c{channels, i == 0 ? channels : 1, kernel, stride, 1, targets[i] - base, i == 0, i == 0};
    a.decoder.push_back(c);
    len = targets[i];
  }
  a.validate();
  return a;
}

FaugModel::FaugModel(FaugArch arch, AnomalyType type, TypeDomain domain, std::uint64_t seed)
    : arch_(std::move(arch)), type_(type), domain_(domain), params_(seed) {
  arch_.validate();
  Rng rng = Rng::stream(seed, {0xfa});
  for (std::size_t i = 0; i < arch_.encoder.size(); ++i) {
    const ConvSpec& c = arch_.encoder[i];
    const std::string p = "enc" + std::to_string(i);
    params_.add(p + ".w", init_uniform_fan_in({c.out, c.in, c.kernel}, c.in * c.kernel, rng));
    params_.add(p + ".b", init_uniform_fan_in({c.out}, c.in * c.kernel, rng));
    if (c.batchnorm) add_batchnorm(params_, p + ".bn", c.out);
  }
  for (std::size_t i = 0; i < arch_.decoder.size(); ++i) {
    const ConvSpec& c = arch_.decoder[i];
    const std::string p = "dec" + std::to_string(i);
    params_.add(p + ".w", init_uniform_fan_in({c.in, c.out, c.kernel}, c.out * c.kernel, rng));
    params_.add(p + ".b", init_uniform_fan_in({c.out}, c.out * c.kernel, rng));
    if (c.batchnorm) add_batchnorm(params_, p + ".bn", c.out);
  }
  params_.add("mlp0.w", init_uniform_fan_in({arch_.mlp_hidden, 3}, 3, rng));
  params_.add("mlp0.b", init_uniform_fan_in({arch_.mlp_hidden}, 3, rng));
  // Zero output layer: training starts from the identity augmentation.
  params_.add("mlp1.w", Tensor({arch_.latent_dim(), arch_.mlp_hidden}));
  params_.add("mlp1.b", Tensor({arch_.latent_dim()}));
}

Var FaugModel::encode(const Var& x, bool train) const {
  if (x.shape().size() != 3 || x.shape()[1] != 1 || x.shape()[2] != arch_.K)
    throw ShapeError("f_aug input must be [B, 1, " + std::to_string(arch_.K) + "], got " +
                     shape_str(x.shape()));
  Var h = x;
  for (std::size_t i = 0; i < arch_.encoder.size(); ++i) {
    const ConvSpec& c = arch_.encoder[i];
    const std::string p = "enc" + std::to_string(i);
    h = post_conv(params_, p, c, conv1d(h, params_[p + ".w"], params_[p + ".b"], c.stride, c.dilation), train);
  }
  return h;
}

Var FaugModel::decode(const Var& z, bool train) const {
  Var h = z;
  for (std::size_t i = 0; i < arch_.decoder.size(); ++i) {
    const ConvSpec& c = arch_.decoder[i];
    const std::string p = "dec" + std::to_string(i);
    h = post_conv(params_, p, c,
                  conv1d_transposed(h, params_[p + ".w"], params_[p + ".b"], c.stride, c.output_padding),
                  train);
  }
  return h;
}

Var FaugModel::shift(const Var& a_enc) const {
  if (a_enc.shape().size() != 2 || a_enc.shape()[1] != 3)
    throw ShapeError("hyperparameter encoding must be [B, 3], got " + shape_str(a_enc.shape()));
  Var h = relu(linear(a_enc, params_["mlp0.w"], params_["mlp0.b"]));
  h = linear(h, params_["mlp1.w"], params_["mlp1.b"]);
  return reshape(h, {a_enc.shape()[0], arch_.latent_channels(), arch_.latent_length()});
}

FaugOutput FaugModel::forward(const Var& x, const Var& a_enc, bool train) const {
  const std::size_t B = x.shape()[0];
  if (a_enc.shape().empty() || a_enc.shape()[0] != B)
    throw ShapeError("f_aug: batch of series and hyperparameters differ");
  Var z = encode(x, train);
  Var za = add(z, shift(a_enc));
  Var both = decode(concat_rows({z, za}), train);
  std::vector<std::size_t> first(B), second(B);
  for (std::size_t i = 0; i < B; ++i) {
    first[i] = i;
    second[i] = B + i;
  }
  return {gather_rows(both, first), gather_rows(both, second)};
}

Tensor FaugModel::encode_params(const std::vector<AugParams>& a) const {
  Tensor out({a.size(), 3});
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[3 * i] = domain_.location.normalize(a[i].location);
    out[3 * i + 1] = domain_.length.normalize(a[i].length);
    out[3 * i + 2] = domain_.level.normalize(a[i].level);
  }
  return out;
}

Var FaugModel::encode_params(const std::vector<double>& locations, const Var& length,
                             const Var& level) const {
  const std::size_t B = locations.size();
  Tensor loc({1, B});
  for (std::size_t i = 0; i < B; ++i) loc[i] = domain_.location.normalize(locations[i]);
  auto norm_row = [B](const Var& v, const Interval& iv) {
    if (!(iv.hi > iv.lo)) return Var::constant(Tensor({1, B}));
    Var n = scale(add_scalar(reshape(v, {1, 1}), -iv.lo), 1.0 / (iv.hi - iv.lo));
    return broadcast_to(n, {1, B});
  };
  return transpose(concat_rows(
      {Var::constant(std::move(loc)), norm_row(length, domain_.length), norm_row(level, domain_.level)}));
}

std::string FaugModel::manifest() const {
  json j = json::parse(arch_.manifest());
  j["anomaly_type"] = to_string(type_);
  return j.dump();
}

void FaugModel::save(const std::filesystem::path& path) const {
  json meta{{"domain",
             {{"location", interval_json(domain_.location)},
              {"length", interval_json(domain_.length)},
              {"level", interval_json(domain_.level)}}},
            {"seed", params_.seed()}};
  save_params(path, params_, manifest(), meta.dump());
}

FaugModel FaugModel::load(const std::filesystem::path& path, const FaugArch& arch, AnomalyType type) {
  FaugModel m(arch, type, TypeDomain{}, 0);
  std::string meta;
  load_params(path, m.params_, m.manifest(), &meta);
  try {
    json j = json::parse(meta);
    const auto& d = j.at("domain");
    m.domain_ = {interval_from(d.at("location")), interval_from(d.at("length")),
                 interval_from(d.at("level"))};
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": bad f_aug metadata: " + e.what());
  }
  return m;
}

Var faug_loss(const FaugModel& model, const Var& x, const Var& target, const Var& a_enc, bool train) {
  FaugOutput out = model.forward(x, a_enc, train);
  Var d1 = sub(out.trn, x);
  Var d2 = sub(out.aug, target);
  return add(mean(mul(d1, d1)), mean(mul(d2, d2)));
}

std::vector<double> pretrain_faug(FaugModel& model, const std::vector<Series>& trn,
                                  const FaugTrainConfig& cfg,
                                  const std::function<void(int, double)>& on_epoch) {
  if (trn.empty()) throw InvalidParams("f_aug pretraining needs training series");
  if (cfg.batch < 2) throw InvalidParams("f_aug batch size must be at least 2");
  HyperDomain dom;
  dom[model.type()] = model.domain();
  AdamState opt(AdamConfig{cfg.lr});
  std::vector<std::string> names = model.params().trainable_names();
  std::vector<double> history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng = Rng::stream(cfg.seed, {0xa0, static_cast<std::uint64_t>(epoch)});
    std::vector<std::size_t> order = order_rng.permutation(trn.size());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch)));
      if (idx.size() < 2) continue;  // batch statistics need two rows
      Rng arng = Rng::stream(cfg.seed, {0xa1, static_cast<std::uint64_t>(epoch), start});
      std::vector<AugParams> a;
      std::vector<Series> targets;
      for (std::size_t i : idx) {
        a.push_back(sample_params(dom, model.type(), arng));
        targets.push_back(inject(trn[i], a.back()));
      }
      Var x = Var::constant(stack_series(trn, idx));
      Var target = Var::constant(stack_series(targets));
      Var loss = faug_loss(model, x, target, Var::constant(model.encode_params(a)), true);
      if (!std::isfinite(loss.item()))
        throw NumericError("f_aug pretraining diverged at epoch " + std::to_string(epoch) +
                           ", batch starting at " + std::to_string(start));
      std::vector<Var> params = model.params().trainable();
      adam_step(params, grad(loss, params), opt, names);
      total += loss.item();
      ++batches;
    }
    const double epoch_loss = batches ? total / static_cast<double>(batches) : 0.0;
    history.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return history;
}

}  // namespace tsap
