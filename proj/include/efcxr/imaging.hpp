#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "efcxr/rng.hpp"

namespace efcxr::imaging {

/// Dense H x W x C image, interleaved channels (HWC), row-major.
/// Intensities are in [0, 1] once normalised.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);
  Image(int height, int width, int channels, std::vector<double> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

struct Size {
  int height = 0;
  int width = 0;
};

/// Bilinear resize with half-pixel centres (the OpenCV / align_corners=false
/// convention). Same-size resize is an exact copy and constant images stay
/// exactly constant.
Image resize_bilinear(const Image& image, Size target);

/// Bilinear sample at fractional source coordinates; taps outside the frame
/// read as `fill`.
double sample_bilinear(const Image& image, double y, double x, int c, double fill);

/// Converts 8-bit raw values to [0, 1] by dividing by 255.
Image normalize_u8(const std::uint8_t* data, int height, int width, int channels);

/// Decodes a JPEG or PNG file (8-bit grayscale or RGB), divides by 255,
/// converts to `channels` (grayscale is replicated to 3 channels, RGB is
/// reduced to luma for 1 channel) and resizes bilinearly to `target`.
/// Throws DecodeError carrying the path on unreadable input and
/// ValidationError on a zero-area target.
Image load_and_normalize(const std::filesystem::path& ref, Size target, int channels = 3);

/// Writes an image as 8-bit PNG (1 or 3 channels, values clamped to [0, 1]
/// and rounded).
void save_png_u8(const Image& image, const std::filesystem::path& path);

/// Writes a single-channel [0, 1] image as 16-bit grayscale PNG.
void save_png_u16(const Image& image, const std::filesystem::path& path);

/// Reads a 16-bit grayscale PNG back into [0, 1].
Image load_png_u16(const std::filesystem::path& path);

// Augmentation ---------------------------------------------------------------

struct AugmentationPolicy {
  double rotation_max_deg = 10.0;
  double crop_scale_min = 0.75;
  double crop_scale_max = 1.00;
  bool rotation_enabled = true;
  bool crop_enabled = true;

  static AugmentationPolicy disabled() {
    AugmentationPolicy p;
    p.rotation_enabled = false;
    p.crop_enabled = false;
    return p;
  }
  bool any_enabled() const noexcept { return rotation_enabled || crop_enabled; }
  /// Throws ValidationError unless 0 <= rotation_max_deg < 45 and
  /// 0 < crop_scale_min <= crop_scale_max <= 1.
  void validate() const;
};

/// Draws an angle uniformly from [-max_deg, +max_deg].
double draw_rotation_angle(double max_deg, RngStream& rng);

/// Rotates about the image centre by `degrees` (counter-clockwise), bilinear,
/// with pixels that map outside the source frame filled with 0.
Image rotate(const Image& image, double degrees);

Image random_rotation(const Image& image, double max_deg, RngStream& rng);

/// Crop rectangle in continuous pixel coordinates.
struct CropWindow {
  double x0 = 0, y0 = 0;
  double width = 0, height = 0;
  double area_fraction = 1;
};

/// Area fraction uniform on [scale_min, scale_max]; the crop keeps the source
/// aspect ratio, and its origin is uniform over all placements that keep it
/// inside the frame.
CropWindow draw_crop_window(int height, int width, double scale_min, double scale_max,
                            RngStream& rng);

/// Resamples `window` back to the image's own H x W bilinearly.
Image crop_resize(const Image& image, const CropWindow& window);

Image random_resized_crop(const Image& image, double scale_min, double scale_max, RngStream& rng);

/// Rotation then crop-resize, each only when enabled.
Image apply_policy(const Image& image, const AugmentationPolicy& policy, RngStream& rng);

}  // namespace efcxr::imaging
