#pragma once

// Detector: convolutional embedding encoder plus a one-logit head, trained
// to tell training series (label 0) from augmented ones (label 1).

#include <filesystem>
#include <string>
#include <vector>

#include "tsap/adam.hpp"
#include "tsap/anomaly.hpp"
#include "tsap/nn.hpp"

namespace tsap {

struct DetectorArch {
  std::size_t K = 256;
  std::vector<ConvSpec> encoder;
  std::size_t pool_kernel = 2, pool_stride = 2;
  std::size_t embed_dim = 10;
  double dropout = 0.2;  // drop probability on the embedding, training only

  std::vector<std::size_t> encoder_lengths() const;
  std::size_t pooled_length() const;
  std::size_t flat_dim() const { return encoder.back().out * pooled_length(); }

  void validate() const;
  std::string manifest() const;

  static DetectorArch desk(std::size_t K = 256);
  static DetectorArch paper(std::size_t K = 2700);
};

class Detector {
 public:
  Detector(DetectorArch arch, std::uint64_t seed);

  const DetectorArch& arch() const { return arch_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  std::string manifest() const { return arch_.manifest(); }
  void save(const std::filesystem::path& path, const std::string& metadata = "{}") const;
  static Detector load(const std::filesystem::path& path, const DetectorArch& arch,
                       std::string* metadata = nullptr);

 private:
  DetectorArch arch_;
  ParamSet params_;
};

// The functions below take the parameters explicitly so that the self-tuner
// can evaluate the detector at unrolled parameter values.

/// [B, 1, K] -> [B, embed_dim]
Var detector_embed(const DetectorArch& arch, const ParamSet& theta, const Var& x, bool train);
/// [B, embed_dim] -> [B]; dropout is applied iff `dropout_rng` is given.
Var detector_logits(const DetectorArch& arch, const ParamSet& theta, const Var& emb,
                    Rng* dropout_rng = nullptr);
/// Mean binary cross-entropy with logits.
Var bce_with_logits(const Var& logits, const Tensor& labels);
/// Training loss on a trn batch (label 0) and an aug batch (label 1), one
/// joint forward pass in training mode.
Var detector_loss(const DetectorArch& arch, const ParamSet& theta, const Var& x_trn,
                  const Var& x_aug, Rng* dropout_rng);

/// One Adam pass over (trn, aug) pairs in minibatches. Returns the mean loss.
double detect_epoch(const Detector& det, const std::vector<Series>& trn,
                    const std::vector<Series>& aug, AdamState& opt, std::size_t batch,
                    std::uint64_t seed);

/// Eval-mode sigmoid scores, higher = more anomalous.
std::vector<double> anomaly_score(const DetectorArch& arch, const ParamSet& theta,
                                  const std::vector<Series>& rows);
/// Eval-mode logits; same ranking as the scores without sigmoid saturation.
std::vector<double> anomaly_logits(const DetectorArch& arch, const ParamSet& theta,
                                   const std::vector<Series>& rows);
/// Eval-mode embeddings of all rows, [n, embed_dim].
Tensor embed_all(const DetectorArch& arch, const ParamSet& theta, const std::vector<Series>& rows);

}  // namespace tsap
