#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "efcxr/evaluation.hpp"
#include "efcxr/imaging.hpp"
#include "efcxr/models.hpp"

namespace efcxr::explain {

using imaging::Image;

enum class Method { Saliency, GradCAM };

std::string_view to_string(Method m);
Method parse_method(std::string_view text);

/// H x W relevance in [0, 1]. A map whose raw values are all equal (in
/// practice: all zero) cannot be min-max scaled; it is stored as zeros and
/// flagged degenerate.
struct AttributionMap {
  int height = 0;
  int width = 0;
  std::vector<double> data;
  Method method = Method::Saliency;
  Label target = Label::ReducedEF;
  bool degenerate = false;

  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  /// Single-channel image view of the map.
  Image image() const;
};

/// Min-max scales a single-channel raw map.
AttributionMap normalize_map(const Image& raw, Method method, Label target);

/// Vanilla gradient: |d score / d pixel|, max over channels, min-max scaled.
/// `raw`, when given, receives the unnormalised magnitudes. Throws
/// NumericError on non-finite gradients.
AttributionMap saliency_map(models::Classifier& model, const Image& image, Label target,
                            Image* raw = nullptr);

/// Intermediate Grad-CAM quantities, before normalisation.
struct GradCamTrace {
  std::vector<double> channel_weights;
  /// ReLU(sum_k w_k A_k) at feature-map resolution.
  Image coarse;
  /// `coarse` upsampled bilinearly to the input size.
  Image upsampled;
};

AttributionMap grad_cam(models::Classifier& model, const Image& image, Label target,
                        GradCamTrace* trace = nullptr);

// Rendering ----------------------------------------------------------------------

/// Name of the colormap used for every render.
inline constexpr std::string_view kColormapName = "inferno";

/// Inferno colormap (polynomial fit), t clamped to [0, 1].
std::array<double, 3> colormap(double t);

/// Grayscale of a 1- or 3-channel image. Channels that are already equal are
/// passed through unchanged, otherwise BT.601 luma.
Image to_gray(const Image& image);

/// Three panels side by side: original, colormapped map, and the blend
/// (1 - alpha) * gray + alpha * colormap(map). A degenerate map carries no
/// attribution, so its blend panel is the original image. Output is
/// H x 3W x 3. Throws ValidationError on a size mismatch or alpha outside
/// [0, 1].
Image overlay(const Image& image, const AttributionMap& map, double alpha);

// Case selection -----------------------------------------------------------------

struct ErrorCaseSelection {
  std::vector<std::string> correct;
  std::vector<std::string> false_positive;
  std::vector<std::string> false_negative;
  std::size_t k = 0;
};

/// The k most confident records (largest |p - 0.5|, ties by study_id) in
/// each of: correct, false positive (predicted Reduced EF on Preserved EF)
/// and false negative. Throws ValidationError for k < 1.
ErrorCaseSelection select_error_cases(const std::vector<evaluation::PredictionRecord>& preds,
                                      std::size_t k);

std::string selection_to_csv(const ErrorCaseSelection& sel);

// Files --------------------------------------------------------------------------

/// Writes `<stem>.png` (16-bit) and `<stem>.json` with
/// {method, target_class, degenerate, study_id}.
void write_map(const AttributionMap& map, const std::filesystem::path& dir, const std::string& stem,
               const std::string& study_id);

}  // namespace efcxr::explain
