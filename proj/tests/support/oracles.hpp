// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library code it is compared against.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "efcxr/cohort.hpp"
#include "efcxr/evaluation.hpp"
#include "efcxr/imaging.hpp"
#include "efcxr/models.hpp"

namespace oracle {

using efcxr::Label;
using efcxr::evaluation::PredictionRecord;
using efcxr::imaging::Image;

// Metrics -----------------------------------------------------------------------

struct Metrics {
  double p_red = 0, r_red = 0, f_red = 0, p_pre = 0, r_pre = 0, f_pre = 0;
  double accuracy = 0, misclassification = 0;
  std::size_t hi = 0, lo = 0, mid = 0, mis_hi = 0, mis_lo = 0, mis_mid = 0;
};

// Naive per-record tally straight from the definitions.
inline Metrics brute_force(const std::vector<PredictionRecord>& preds, double hi_t = 0.9, double lo_t = 0.1) {
  double pred_red = 0, pred_pre = 0, true_red = 0, true_pre = 0, hit_red = 0, hit_pre = 0, ok = 0;
  Metrics m;
  for (const auto& p : preds) {
    const bool says_reduced = p.p_reduced > 0.5;
    const bool is_reduced = p.truth == Label::ReducedEF;
    (says_reduced ? pred_red : pred_pre) += 1;
    (is_reduced ? true_red : true_pre) += 1;
    if (says_reduced == is_reduced) {
      ok += 1;
      (is_reduced ? hit_red : hit_pre) += 1;
    }
    const bool wrong = says_reduced != is_reduced;
    if (p.p_reduced > hi_t) {
      ++m.hi;
      m.mis_hi += wrong;
    } else if (p.p_reduced < lo_t) {
      ++m.lo;
      m.mis_lo += wrong;
    } else {
      ++m.mid;
      m.mis_mid += wrong;
    }
  }
  auto div = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
  auto f1 = [](double p, double r) { return p + r == 0 ? 0.0 : 2 * p * r / (p + r); };
  m.p_red = div(hit_red, pred_red);
  m.r_red = div(hit_red, true_red);
  m.f_red = f1(m.p_red, m.r_red);
  m.p_pre = div(hit_pre, pred_pre);
  m.r_pre = div(hit_pre, true_pre);
  m.f_pre = f1(m.p_pre, m.r_pre);
  m.accuracy = ok / static_cast<double>(preds.size());
  m.misclassification = (static_cast<double>(preds.size()) - ok) / static_cast<double>(preds.size());
  return m;
}

inline std::vector<PredictionRecord> random_predictions(std::mt19937_64& gen, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    PredictionRecord r;
    r.study_id = "s" + std::to_string(i);
    r.p_reduced = u(gen);
    r.predicted = r.p_reduced > 0.5 ? Label::ReducedEF : Label::PreservedEF;
    r.truth = coin(gen) ? Label::ReducedEF : Label::PreservedEF;
    out.push_back(r);
  }
  return out;
}

// Images ------------------------------------------------------------------------

// Half-pixel-centre bilinear upsampling written from the textbook formula.
inline Image bilinear(const Image& src, int out_h, int out_w) {
  Image out(out_h, out_w, src.channels());
  const double sy = static_cast<double>(src.height()) / out_h;
  const double sx = static_cast<double>(src.width()) / out_w;
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
      const int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
      const int y1 = std::min(y0 + 1, src.height() - 1), x1 = std::min(x0 + 1, src.width() - 1);
      const double wy = fy - y0, wx = fx - x0;
      for (int c = 0; c < src.channels(); ++c) {
        out.at(y, x, c) = (1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
                          wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c));
      }
    }
  }
  return out;
}

// Mean intensity of the central square covering the middle half of each axis.
inline double central_mean(const Image& img) {
  const int y0 = img.height() / 4, y1 = img.height() - img.height() / 4;
  const int x0 = img.width() / 4, x1 = img.width() - img.width() / 4;
  double s = 0;
  int n = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      for (int c = 0; c < img.channels(); ++c, ++n) s += img.at(y, x, c);
    }
  }
  return s / n;
}

// Best single-threshold accuracy of "central mean > t means Reduced EF".
inline double threshold_accuracy(const std::vector<double>& score, const std::vector<Label>& label) {
  std::vector<std::size_t> idx(score.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return score[a] < score[b]; });
  // Threshold below everything: all predicted reduced.
  std::size_t correct = std::count(label.begin(), label.end(), Label::ReducedEF);
  std::size_t best = correct;
  for (auto i : idx) {
    correct += label[i] == Label::ReducedEF ? -1 : 1;
    best = std::max(best, correct);
  }
  return static_cast<double>(best) / static_cast<double>(score.size());
}

// Accuracy of a fixed threshold (no refitting).
inline double fixed_threshold_accuracy(const std::vector<double>& score, const std::vector<Label>& label, double t) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < score.size(); ++i) ok += (score[i] > t) == (label[i] == Label::ReducedEF);
  return static_cast<double>(ok) / static_cast<double>(score.size());
}

inline double fit_threshold(const std::vector<double>& score, const std::vector<Label>& label) {
  double best_t = 0, best_acc = -1;
  std::vector<double> s = score;
  std::sort(s.begin(), s.end());
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    const double t = 0.5 * (s[i] + s[i + 1]);
    const double acc = fixed_threshold_accuracy(score, label, t);
    if (acc > best_acc) best_acc = acc, best_t = t;
  }
  return best_t;
}

// Networks ----------------------------------------------------------------------

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Central finite difference of the target score at one input element.
inline double fd_gradient(efcxr::models::Classifier& model, Image image, int y, int x, int c, Label target,
                          double eps = 1e-3) {
  const double orig = image.at(y, x, c);
  image.at(y, x, c) = orig + eps;
  const double up = model.logits(std::span<const Image>(&image, 1))[0];
  image.at(y, x, c) = orig - eps;
  const double down = model.logits(std::span<const Image>(&image, 1))[0];
  const double g = (up - down) / (2 * eps);
  return target == Label::ReducedEF ? g : -g;
}

// TinyConv reduced to one live path: conv1 channel 0 and conv2 channel 0 are
// centre-tap identities, every other weight and bias is zero and the head
// reads channel 0 with weight v. Then the last-conv activation is
// A0[i][j] = silu(silu(x[2i][2j])) and d score / d A0 = v / (h w).
inline void set_single_channel_tinyconv(efcxr::models::Model& m, double v, double bias = 0.0) {
  std::vector<double> w1(4 * 1 * 9, 0.0), b1(4, 0.0), w2(8 * 4 * 9, 0.0), b2(8, 0.0), fw(8, 0.0);
  w1[4] = 1.0;   // out 0, in 0, (1, 1)
  w2[4] = 1.0;   // out 0, in 0, (1, 1)
  fw[0] = v;
  m.set_parameter("conv1.weight", w1);
  m.set_parameter("conv1.bias", b1);
  m.set_parameter("conv2.weight", w2);
  m.set_parameter("conv2.bias", b2);
  m.set_parameter("fc.weight", fw);
  const std::vector<double> fb{bias};
  m.set_parameter("fc.bias", fb);
}

inline Image expected_single_channel_gradcam(const Image& x, double v) {
  const int h = (x.height() + 1) / 2, w = (x.width() + 1) / 2;
  Image coarse(h, w, 1);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) coarse.at(i, j) = std::max(0.0, v / (h * w) * silu(silu(x.at(2 * i, 2 * j))));
  }
  return bilinear(coarse, x.height(), x.width());
}

inline Image random_image(std::mt19937_64& gen, int h, int w, int c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w, c);
  for (double& v : img.data()) v = u(gen);
  return img;
}

// Table II of the published comparison: (precision, recall, F1) per row.
struct PaperRow {
  const char* name;
  double p, r, f1;
};
inline constexpr PaperRow kTableII[] = {
    {"DenseNet121 Reduced EF", 0.66, 0.29, 0.41},   {"DenseNet121 Preserved EF", 0.62, 0.89, 0.73},
    {"EfficientNet-B0 Reduced EF", 0.70, 0.52, 0.60}, {"EfficientNet-B0 Preserved EF", 0.69, 0.83, 0.76},
    {"ResNet50 Reduced EF", 0.63, 0.58, 0.60},      {"ResNet50 Preserved EF", 0.68, 0.73, 0.71},
};

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("efcxr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
