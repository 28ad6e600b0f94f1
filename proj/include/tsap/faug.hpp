#pragma once

// Differentiable augmentation model: a convolutional autoencoder whose
// latent code is shifted by an MLP embedding of the hyperparameters.
//   z_trn = Enc(x),  z_a = MLP(a),  x~_trn = Dec(z_trn),  x~_aug = Dec(z_trn + z_a)

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tsap/anomaly.hpp"
#include "tsap/nn.hpp"

namespace tsap {

struct FaugArch {
  std::size_t K = 256;
  std::vector<ConvSpec> encoder;
  std::vector<ConvSpec> decoder;  // transposed convolutions
  std::size_t mlp_hidden = 16;

  /// Feature-map lengths after each encoder / decoder stage.
  std::vector<std::size_t> encoder_lengths() const;
  std::vector<std::size_t> decoder_lengths() const;
  std::size_t latent_channels() const { return encoder.back().out; }
  std::size_t latent_length() const { return encoder_lengths().back(); }
  std::size_t latent_dim() const { return latent_channels() * latent_length(); }

  /// Checks channel chaining and that the decoder returns to length K.
  void validate() const;
  std::string manifest() const;

  /// Two strided conv stages and their mirror image, with output padding
  /// chosen so the decoder lands exactly on K.
  static FaugArch mirrored(std::size_t K, std::size_t channels, std::size_t kernel,
                           std::size_t stride);
  static FaugArch desk(std::size_t K = 256) { return mirrored(K, 32, 16, 4); }
  static FaugArch paper(std::size_t K = 2700) { return mirrored(K, 64, 100, 4); }
};

struct FaugOutput {
  Var trn;  // [B, 1, K]
  Var aug;  // [B, 1, K]
};

class FaugModel {
 public:
  FaugModel(FaugArch arch, AnomalyType type, TypeDomain domain, std::uint64_t seed);

  const FaugArch& arch() const { return arch_; }
  AnomalyType type() const { return type_; }
  const TypeDomain& domain() const { return domain_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Var encode(const Var& x, bool train) const;
  Var decode(const Var& z, bool train) const;
  /// a_enc [B, 3] -> z_a [B, C, L]
  Var shift(const Var& a_enc) const;
  /// Decodes both branches as one batch so they share normalization.
  FaugOutput forward(const Var& x, const Var& a_enc, bool train) const;

  /// (location, length, level) min-max normalized by the domain, [B, 3].
  Tensor encode_params(const std::vector<AugParams>& a) const;
  /// Same encoding with shared, differentiable length and level.
  Var encode_params(const std::vector<double>& locations, const Var& length, const Var& level) const;

  /// Identity string of the model: architecture plus anomaly type.
  std::string manifest() const;
  void save(const std::filesystem::path& path) const;
  /// Refuses files whose manifest differs from (arch, type).
  static FaugModel load(const std::filesystem::path& path, const FaugArch& arch, AnomalyType type);

 private:
  FaugArch arch_;
  AnomalyType type_;
  TypeDomain domain_;
  ParamSet params_;
};

struct FaugTrainConfig {
  int epochs = 100;
  std::size_t batch = 64;
  double lr = 0.002;
  std::uint64_t seed = 0;
};

/// Mean squared reconstruction of both branches: x vs x~_trn and g(x, a) vs x~_aug.
Var faug_loss(const FaugModel& model, const Var& x, const Var& target, const Var& a_enc, bool train);

/// Offline pretraining with a freshly sampled a per series and batch. Returns
/// the mean loss of every epoch; `on_epoch(epoch, loss)` is optional.
std::vector<double> pretrain_faug(FaugModel& model, const std::vector<Series>& trn,
                                  const FaugTrainConfig& cfg,
                                  const std::function<void(int, double)>& on_epoch = {});

}  // namespace tsap
