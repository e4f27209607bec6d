#include "efcxr/explain.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "efcxr/text.hpp"

namespace efcxr::explain {

std::string_view to_string(Method m) { return m == Method::Saliency ? "saliency" : "gradcam"; }

Method parse_method(std::string_view t) {
  const std::string s = text::lower(text::trim(t));
  if (s == "saliency") return Method::Saliency;
  if (s == "gradcam" || s == "grad-cam" || s == "grad_cam") return Method::GradCAM;
  throw ValidationError("unknown attribution method '" + std::string(t) + "' (expected saliency or gradcam)");
}

Image AttributionMap::image() const { return Image(height, width, 1, data); }

AttributionMap normalize_map(const Image& raw, Method method, Label target) {
  if (raw.channels() != 1) throw ValidationError("attribution maps are single-channel");
  AttributionMap m;
  m.height = raw.height();
  m.width = raw.width();
  m.method = method;
  m.target = target;
  const auto values = raw.data();
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double min = *lo, range = *hi - *lo;
  m.data.assign(values.size(), 0.0);
  if (range == 0.0) {
    m.degenerate = true;
    return m;
  }
  for (std::size_t i = 0; i < values.size(); ++i) m.data[i] = (values[i] - min) / range;
  return m;
}

AttributionMap saliency_map(models::Classifier& model, const Image& image, Label target, Image* raw) {
  model.check_input(image);
  const Image grad = model.score_input_gradient(image, target);
  Image mag(image.height(), image.width(), 1);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      double best = 0.0;
      for (int c = 0; c < image.channels(); ++c) {
        const double g = grad.at(y, x, c);
        if (!std::isfinite(g)) {
          throw NumericError(fmt::format("non-finite input gradient at ({}, {}, {})", y, x, c));
        }
        best = std::max(best, std::abs(g));
      }
      mag.at(y, x) = best;
    }
  }
  if (raw) *raw = mag;
  return normalize_map(mag, Method::Saliency, target);
}

AttributionMap grad_cam(models::Classifier& model, const Image& image, Label target, GradCamTrace* trace) {
  model.check_input(image);
  const models::FeatureMapGradient fg = model.last_conv_gradient(image, target);
  const std::size_t plane = static_cast<std::size_t>(fg.height) * fg.width;
  std::vector<double> weights(fg.channels, 0.0);
  for (int k = 0; k < fg.channels; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += fg.gradient[k * plane + i];
    weights[k] = s / static_cast<double>(plane);
  }
  Image coarse(fg.height, fg.width, 1);
  for (std::size_t i = 0; i < plane; ++i) {
    double v = 0.0;
    for (int k = 0; k < fg.channels; ++k) v += weights[k] * fg.activation[k * plane + i];
    if (!std::isfinite(v)) throw NumericError("non-finite Grad-CAM activation");
    coarse.data()[i] = std::max(v, 0.0);
  }
  Image up = imaging::resize_bilinear(coarse, {image.height(), image.width()});
  AttributionMap m = normalize_map(up, Method::GradCAM, target);
  if (trace) {
    trace->channel_weights = std::move(weights);
    trace->coarse = std::move(coarse);
    trace->upsampled = std::move(up);
  }
  return m;
}

std::array<double, 3> colormap(double t) {
  // Polynomial fit of matplotlib's inferno.
  static constexpr std::array<std::array<double, 3>, 7> c = {{
      {0.0002189403691192265, 0.001651004631001012, -0.01948089843709184},
      {0.1065134194856116, 0.5639564367884091, 3.932712388889277},
      {11.60249308247187, -3.972853965665698, -15.9423941062914},
      {-41.70399613139459, 17.43639888205313, 44.35414519872813},
      {77.162935699427, -33.40235894210092, -81.80730925738993},
      {-71.31942824499214, 32.62606426397723, 73.20951985803202},
      {25.13112622477341, -12.24266895238567, -23.07032500287172},
  }};
  t = std::clamp(t, 0.0, 1.0);
  std::array<double, 3> rgb{};
  for (int ch = 0; ch < 3; ++ch) {
    double v = c[6][ch];
    for (int i = 5; i >= 0; --i) v = c[i][ch] + t * v;
    rgb[ch] = std::clamp(v, 0.0, 1.0);
  }
  return rgb;
}

Image to_gray(const Image& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw ValidationError(fmt::format("expected 1 or 3 channels, got {}", image.channels()));
  }
  Image g(image.height(), image.width(), 1);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (image.channels() == 1) {
        g.at(y, x) = image.at(y, x);
        continue;
      }
      const double r = image.at(y, x, 0), gr = image.at(y, x, 1), b = image.at(y, x, 2);
      g.at(y, x) = (r == gr && gr == b) ? r : 0.299 * r + 0.587 * gr + 0.114 * b;
    }
  }
  return g;
}

Image overlay(const Image& image, const AttributionMap& map, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError(fmt::format("alpha {} outside [0, 1]", alpha));
  if (image.height() != map.height || image.width() != map.width) {
    throw ValidationError(fmt::format("map is {}x{} but image is {}x{}", map.height, map.width,
                                      image.height(), image.width()));
  }
  const Image gray = to_gray(image);
  const int h = image.height(), w = image.width();
  Image out(h, 3 * w, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double g = gray.at(y, x);
      const auto cm = colormap(map.at(y, x));
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = g;
        out.at(y, w + x, c) = cm[c];
        out.at(y, 2 * w + x, c) = map.degenerate ? g : (1.0 - alpha) * g + alpha * cm[c];
      }
    }
  }
  return out;
}

ErrorCaseSelection select_error_cases(const std::vector<evaluation::PredictionRecord>& preds, std::size_t k) {
  if (k < 1) throw ValidationError("k must be >= 1");
  std::vector<const evaluation::PredictionRecord*> correct, fp, fn;
  for (const auto& p : preds) {
    if (p.correct()) correct.push_back(&p);
    else if (p.predicted == Label::ReducedEF) fp.push_back(&p);
    else fn.push_back(&p);
  }
  auto pick = [k](std::vector<const evaluation::PredictionRecord*>& group) {
    std::sort(group.begin(), group.end(), [](const auto* a, const auto* b) {
      const double ca = std::abs(a->p_reduced - 0.5), cb = std::abs(b->p_reduced - 0.5);
      if (ca != cb) return ca > cb;
      return a->study_id < b->study_id;
    });
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < std::min(k, group.size()); ++i) ids.push_back(group[i]->study_id);
    return ids;
  };
  ErrorCaseSelection sel;
  sel.k = k;
  sel.correct = pick(correct);
  sel.false_positive = pick(fp);
  sel.false_negative = pick(fn);
  return sel;
}

std::string selection_to_csv(const ErrorCaseSelection& sel) {
  std::string out = "group,rank,study_id\n";
  auto emit = [&](std::string_view group, const std::vector<std::string>& ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out += text::csv_line({std::string(group), std::to_string(i + 1), ids[i]});
    }
  };
  emit("correct", sel.correct);
  emit("false_positive", sel.false_positive);
  emit("false_negative", sel.false_negative);
  return out;
}

void write_map(const AttributionMap& map, const std::filesystem::path& dir, const std::string& stem,
               const std::string& study_id) {
  std::filesystem::create_directories(dir);
  imaging::save_png_u16(map.image(), dir / (stem + ".png"));
  nlohmann::ordered_json j = {{"method", to_string(map.method)},
                              {"target_class", to_string(map.target)},
                              {"degenerate", map.degenerate},
                              {"study_id", study_id}};
  text::write_file_atomic(dir / (stem + ".json"), j.dump(2) + "\n");
}

}  // namespace efcxr::explain
