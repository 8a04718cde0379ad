#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "cvnn/autograd.hpp"

namespace cvnn {

/// How per-coordinate differences combine under the square root of the
/// complex distance D(f1, f2) = sum_i sqrt(dr_i^2 (+/-) di_i^2).
enum class DistanceMode {
  modulus_sum,      // sum of complex moduli |f1_i - f2_i|
  literal_clamped,  // sqrt(max(0, dr^2 - di^2)) per coordinate
};

/// SoftPN variants, with s = e^Dpos / (e^Dpos + e^D*):
///  corrected: s^2 + ((1-s) - 1)^2 = 2 s^2
///  literal:   s^2 + (1-s)^2
enum class LossForm { corrected, literal };

/// Which side of the score scale means "match".
enum class Polarity { larger_is_match, smaller_is_match };

// Plain evaluation on (N,D) descriptor batches (or single (D) vectors).
std::vector<double> complex_distance(const ComplexTensor& f1, const ComplexTensor& f2, DistanceMode mode);
double softpn_loss(double d_pos, double d_neg_min, LossForm form);

/// Differentiable per-row distance: (N,D) x (N,D) -> (N).
Var complex_distance(CVar f1, CVar f2, DistanceMode mode);
/// Mean SoftPN loss over a batch of triplet distances, each (N).
Var softpn_loss(Var d_pos, Var d_p1n, Var d_p2n, LossForm form);
/// Mean of (score - label)^2.
Var mse_pair_loss(Var scores, const Tensor& labels);

/// False-positive rate at the strictest threshold reaching 95% recall.
/// Tied scores are always accepted or rejected together.
double fpr95(std::span<const double> scores, std::span<const int> labels, Polarity polarity);

struct RocPoint {
  double threshold;  // +/-inf for the (0,0) endpoint
  double fpr;
  double tpr;
};

/// Staircase over every distinct threshold, from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels, Polarity polarity);
double roc_auc(std::span<const RocPoint> curve);
/// CSV with header "threshold,fpr,tpr".
void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> curve);

}  // namespace cvnn
