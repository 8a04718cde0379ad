#include "cvnn/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "cvnn/errors.hpp"

namespace cvnn {

namespace {

struct RowLayout {
  std::size_t rows;
  std::size_t dim;
};

RowLayout row_layout(const Shape& a, const Shape& b) {
  if (a != b) throw ShapeError("distance between descriptors of shape " + a.str() + " and " + b.str());
  if (a.rank() == 1) return {1, a[0]};
  if (a.rank() == 2) return {a[0], a[1]};
  throw ShapeError("descriptors must be (D) or (N,D), got " + a.str());
}

// Per-coordinate term and its partial derivatives w.r.t. (dr, di).
struct Term {
  double value;
  double d_dr;
  double d_di;
};

Term distance_term(double dr, double di, DistanceMode mode) {
  if (mode == DistanceMode::modulus_sum) {
    const double m = std::hypot(dr, di);
    if (m == 0.0) return {0.0, 0.0, 0.0};
    return {m, dr / m, di / m};
  }
  const double q = dr * dr - di * di;
  if (q <= 0.0) return {0.0, 0.0, 0.0};
  const double m = std::sqrt(q);
  return {m, dr / m, -di / m};
}

double stable_sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double loss_of(double s, LossForm form) { return form == LossForm::corrected ? 2.0 * s * s : s * s + (1.0 - s) * (1.0 - s); }
double dloss_ds(double s, LossForm form) { return form == LossForm::corrected ? 4.0 * s : 4.0 * s - 2.0; }

// Scores mapped so that larger always means match, with validated labels.
std::vector<double> oriented(std::span<const double> scores, std::span<const int> labels, Polarity polarity) {
  if (scores.size() != labels.size()) {
    throw ShapeError(std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) + " labels");
  }
  std::size_t pos = 0;
  std::vector<double> out(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (labels[k] != 0 && labels[k] != 1) throw ArgumentError("labels must be 0 or 1");
    if (std::isnan(scores[k])) throw NumericError("NaN score at index " + std::to_string(k));
    pos += labels[k];
    out[k] = polarity == Polarity::larger_is_match ? scores[k] : -scores[k];
  }
  if (pos == 0 || pos == scores.size()) throw ContractError("metric needs at least one positive and one negative");
  return out;
}

// One point per tie block, in order of loosening threshold.
struct Step {
  double threshold;  // oriented
  std::size_t tp;
  std::size_t fp;
};

std::vector<Step> sweep(const std::vector<double>& s, std::span<const int> labels) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return labels[a] > labels[b];
  });
  std::vector<Step> steps;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = s[order[i]];
    for (; i < order.size() && s[order[i]] == t; ++i) (labels[order[i]] ? tp : fp)++;
    steps.push_back({t, tp, fp});
  }
  return steps;
}

}  // namespace

std::vector<double> complex_distance(const ComplexTensor& f1, const ComplexTensor& f2, DistanceMode mode) {
  const auto [rows, dim] = row_layout(f1.shape(), f2.shape());
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = r * dim; i < (r + 1) * dim; ++i) {
      out[r] += distance_term(f1.real()[i] - f2.real()[i], f1.imag()[i] - f2.imag()[i], mode).value;
    }
  }
  return out;
}

double softpn_loss(double d_pos, double d_neg_min, LossForm form) {
  return loss_of(stable_sigmoid(d_pos - d_neg_min), form);
}

Var complex_distance(CVar f1, CVar f2, DistanceMode mode) {
  const auto [rows, dim] = row_layout(f1.shape(), f2.shape());
  if (f1.im.shape() != f1.shape() || f2.im.shape() != f2.shape()) throw ShapeError("complex parts differ in shape");
  const Tensor &ar = f1.re.value(), &ai = f1.im.value(), &br = f2.re.value(), &bi = f2.im.value();
  Tensor out(Shape{rows});
  auto d_dr = std::make_shared<Tensor>(ar.shape());
  auto d_di = std::make_shared<Tensor>(ar.shape());
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = r * dim; i < (r + 1) * dim; ++i) {
      const double dr = ar[i] - br[i], di = ai[i] - bi[i];
      // Kinks: zero difference (modulus_sum) or the clamp boundary |dr| = |di|.
      margin = std::min(margin, mode == DistanceMode::modulus_sum ? std::hypot(dr, di)
                                                                  : std::abs(std::abs(dr) - std::abs(di)));
      const Term t = distance_term(dr, di, mode);
      out[r] += t.value;
      (*d_dr)[i] = t.d_dr;
      (*d_di)[i] = t.d_di;
    }
  }
  Tape& tape = *f1.re.tape;
  tape.note_kink(margin);
  return tape.record1(
      "complex_distance", {f1.re, f1.im, f2.re, f2.im}, std::move(out),
      [d_dr, d_di, rows = rows, dim = dim](const BackwardContext& ctx) {
        const Tensor& g = ctx.grads[0];
        Tensor gr(d_dr->shape()), gi(d_di->shape());
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = r * dim; i < (r + 1) * dim; ++i) {
            gr[i] = g[r] * (*d_dr)[i];
            gi[i] = g[r] * (*d_di)[i];
          }
        }
        Tensor nr = gr, ni = gi;
        for (auto& v : nr.data()) v = -v;
        for (auto& v : ni.data()) v = -v;
        return std::vector<Tensor>{std::move(gr), std::move(gi), std::move(nr), std::move(ni)};
      });
}

Var softpn_loss(Var d_pos, Var d_p1n, Var d_p2n, LossForm form) {
  const Shape& s = d_pos.shape();
  if (s.rank() != 1 || d_p1n.shape() != s || d_p2n.shape() != s) {
    throw ShapeError("softpn distances must be equal (N) vectors");
  }
  const std::size_t n = s[0];
  const Tensor &dp = d_pos.value(), &a = d_p1n.value(), &b = d_p2n.value();
  auto ds = std::make_shared<std::vector<double>>(n);   // dL_k/du_k
  auto first = std::make_shared<std::vector<bool>>(n);  // D* taken from d_p1n
  double total = 0.0;
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    margin = std::min(margin, std::abs(a[k] - b[k]));
    (*first)[k] = a[k] <= b[k];
    const double dstar = (*first)[k] ? a[k] : b[k];
    const double sk = stable_sigmoid(dp[k] - dstar);
    total += loss_of(sk, form);
    (*ds)[k] = dloss_ds(sk, form) * sk * (1.0 - sk);
  }
  d_pos.tape->note_kink(margin);
  return d_pos.tape->record1("softpn_loss", {d_pos, d_p1n, d_p2n}, Tensor::scalar(total / static_cast<double>(n)),
                             [ds, first, n](const BackwardContext& ctx) {
                               const double g = ctx.grads[0][0] / static_cast<double>(n);
                               Tensor gp(Shape{n}), g1(Shape{n}), g2(Shape{n});
                               for (std::size_t k = 0; k < n; ++k) {
                                 gp[k] = g * (*ds)[k];
                                 ((*first)[k] ? g1 : g2)[k] = -g * (*ds)[k];
                               }
                               return std::vector<Tensor>{std::move(gp), std::move(g1), std::move(g2)};
                             });
}

Var mse_pair_loss(Var scores, const Tensor& labels) {
  if (scores.shape() != labels.shape() || scores.shape().rank() != 1) {
    throw ShapeError("mse over scores " + scores.shape().str() + " and labels " + labels.shape().str());
  }
  return mean(square(sub(scores, scores.tape->constant(labels))));
}

double fpr95(std::span<const double> scores, std::span<const int> labels, Polarity polarity) {
  const std::vector<double> s = oriented(scores, labels, polarity);
  const std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = labels.size() - pos;
  for (const Step& st : sweep(s, labels)) {
    if (st.tp * 100 >= pos * 95) return static_cast<double>(st.fp) / static_cast<double>(neg);
  }
  return 1.0;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels, Polarity polarity) {
  const std::vector<double> s = oriented(scores, labels, polarity);
  const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double neg = static_cast<double>(labels.size()) - pos;
  const double sign = polarity == Polarity::larger_is_match ? 1.0 : -1.0;
  std::vector<RocPoint> curve{{sign * std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  for (const Step& st : sweep(s, labels)) {
    curve.push_back({sign * st.threshold, static_cast<double>(st.fp) / neg, static_cast<double>(st.tp) / pos});
  }
  return curve;
}

double roc_auc(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t k = 1; k < curve.size(); ++k) {
    area += (curve[k].fpr - curve[k - 1].fpr) * 0.5 * (curve[k].tpr + curve[k - 1].tpr);
  }
  return area;
}

void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "threshold,fpr,tpr\n" << std::setprecision(17);
  for (const RocPoint& p : curve) {
    if (std::isinf(p.threshold)) {
      out << (p.threshold > 0 ? "inf" : "-inf");
    } else {
      out << p.threshold;
    }
    out << ',' << p.fpr << ',' << p.tpr << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace cvnn
