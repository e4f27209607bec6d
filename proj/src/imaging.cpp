#include "efcxr/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "efcxr/types.hpp"

namespace efcxr::imaging {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 1 || width < 1 || channels < 1) {
    throw ValidationError(fmt::format("invalid image shape {}x{}x{}", height, width, channels));
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height < 1 || width < 1 || channels < 1 ||
      data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ValidationError(fmt::format("image buffer of {} values does not match shape {}x{}x{}",
                                      data_.size(), height, width, channels));
  }
}

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double lerp(double a, double b, double t) { return a + (b - a) * t; }

}  // namespace

double sample_bilinear(const Image& image, double y, double x, int c, double fill) {
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const int y0 = static_cast<int>(fy);
  const int x0 = static_cast<int>(fx);
  const double ty = y - fy;
  const double tx = x - fx;
  auto tap = [&](int yy, int xx) {
    if (yy < 0 || yy >= image.height() || xx < 0 || xx >= image.width()) return fill;
    return image.at(yy, xx, c);
  };
  const double top = lerp(tap(y0, x0), tap(y0, x0 + 1), tx);
  const double bottom = lerp(tap(y0 + 1, x0), tap(y0 + 1, x0 + 1), tx);
  return lerp(top, bottom, ty);
}

namespace {

// Bilinear sample with edge replication, used by the resize paths.
double sample_clamped(const Image& image, double y, double x, int c) {
  y = std::clamp(y, 0.0, static_cast<double>(image.height() - 1));
  x = std::clamp(x, 0.0, static_cast<double>(image.width() - 1));
  const int y0 = static_cast<int>(y);
  const int x0 = static_cast<int>(x);
  const int y1 = std::min(y0 + 1, image.height() - 1);
  const int x1 = std::min(x0 + 1, image.width() - 1);
  const double ty = y - y0;
  const double tx = x - x0;
  const double top = lerp(image.at(y0, x0, c), image.at(y0, x1, c), tx);
  const double bottom = lerp(image.at(y1, x0, c), image.at(y1, x1, c), tx);
  return lerp(top, bottom, ty);
}

// Resamples the source rectangle [x0, x0 + w) x [y0, y0 + h) onto an
// out_h x out_w grid with half-pixel centres.
Image resample_window(const Image& image, double x0, double y0, double w, double h, int out_h,
                      int out_w) {
  Image out(out_h, out_w, image.channels());
  const double sy = h / out_h;
  const double sx = w / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double src_y = y0 + (y + 0.5) * sy - 0.5;
    for (int x = 0; x < out_w; ++x) {
      const double src_x = x0 + (x + 0.5) * sx - 0.5;
      for (int c = 0; c < image.channels(); ++c) {
        out.at(y, x, c) = sample_clamped(image, src_y, src_x, c);
      }
    }
  }
  return out;
}

}  // namespace

Image resize_bilinear(const Image& image, Size target) {
  if (target.height <= 0 || target.width <= 0) {
    throw ValidationError(
        fmt::format("zero-area resize target {}x{}", target.height, target.width));
  }
  if (target.height == image.height() && target.width == image.width()) return image;
  return resample_window(image, 0.0, 0.0, image.width(), image.height(), target.height,
                         target.width);
}

Image normalize_u8(const std::uint8_t* data, int height, int width, int channels) {
  Image out(height, width, channels);
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = data[i] / 255.0;
  return out;
}

namespace {

Image to_channels(const Image& image, int channels) {
  if (image.channels() == channels) return image;
  Image out(image.height(), image.width(), channels);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (image.channels() == 1) {
        for (int c = 0; c < channels; ++c) out.at(y, x, c) = image.at(y, x, 0);
      } else {
        // ITU-R BT.601 luma.
        const double v = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) +
                         0.114 * image.at(y, x, 2);
        for (int c = 0; c < channels; ++c) out.at(y, x, c) = clamp01(v);
      }
    }
  }
  return out;
}

}  // namespace

Image load_and_normalize(const std::filesystem::path& ref, Size target, int channels) {
  if (target.height <= 0 || target.width <= 0) {
    throw ValidationError(
        fmt::format("zero-area target size {}x{}", target.height, target.width));
  }
  if (target.height < 8 || target.width < 8) {
    throw ValidationError(
        fmt::format("target size {}x{} below the 8x8 minimum", target.height, target.width));
  }
  if (channels != 1 && channels != 3) {
    throw ValidationError(fmt::format("unsupported channel count {}", channels));
  }
  if (!std::filesystem::exists(ref)) throw DecodeError(ref.string(), "image file not found");

  cv::Mat raw = cv::imread(ref.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DecodeError(ref.string(), "cannot decode image");
  if (raw.depth() != CV_8U) throw DecodeError(ref.string(), "image is not 8-bit");
  const int src_channels = raw.channels();
  if (src_channels != 1 && src_channels != 3 && src_channels != 4) {
    throw DecodeError(ref.string(), fmt::format("unsupported channel count {}", src_channels));
  }
  // OpenCV decodes colour as BGR(A); reorder to RGB and drop alpha.
  const int kept = src_channels == 1 ? 1 : 3;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(raw.rows) * raw.cols * kept);
  for (int y = 0; y < raw.rows; ++y) {
    const auto* row = raw.ptr<std::uint8_t>(y);
    for (int x = 0; x < raw.cols; ++x) {
      for (int c = 0; c < kept; ++c) {
        const int src_c = kept == 1 ? 0 : 2 - c;
        rgb[(static_cast<std::size_t>(y) * raw.cols + x) * kept + c] = row[x * src_channels + src_c];
      }
    }
  }

  const Image normalized = normalize_u8(rgb.data(), raw.rows, raw.cols, kept);
  return resize_bilinear(to_channels(normalized, channels), target);
}

void save_png_u8(const Image& image, const std::filesystem::path& path) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw ValidationError("PNG output supports 1 or 3 channels");
  }
  cv::Mat mat(image.height(), image.width(), image.channels() == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) {
        // OpenCV stores colour as BGR.
        const int dst_c = image.channels() == 3 ? 2 - c : c;
        row[x * image.channels() + dst_c] =
            static_cast<std::uint8_t>(std::lround(clamp01(image.at(y, x, c)) * 255.0));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw Error("cannot write PNG: " + path.string());
}

void save_png_u16(const Image& image, const std::filesystem::path& path) {
  if (image.channels() != 1) throw ValidationError("16-bit PNG output requires one channel");
  cv::Mat mat(image.height(), image.width(), CV_16UC1);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = mat.ptr<std::uint16_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      row[x] = static_cast<std::uint16_t>(std::lround(clamp01(image.at(y, x)) * 65535.0));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw Error("cannot write PNG: " + path.string());
}

Image load_png_u16(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DecodeError(path.string(), "cannot decode image");
  if (raw.type() != CV_16UC1) throw DecodeError(path.string(), "not a 16-bit grayscale PNG");
  Image out(raw.rows, raw.cols, 1);
  for (int y = 0; y < raw.rows; ++y) {
    for (int x = 0; x < raw.cols; ++x) out.at(y, x) = raw.at<std::uint16_t>(y, x) / 65535.0;
  }
  return out;
}

void AugmentationPolicy::validate() const {
  if (!(rotation_max_deg >= 0.0 && rotation_max_deg < 45.0)) {
    throw ValidationError(
        fmt::format("rotation_max_deg must lie in [0, 45), got {}", rotation_max_deg));
  }
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw ValidationError(fmt::format("crop scale range must satisfy 0 < min <= max <= 1, got ({}, {})",
                                      crop_scale_min, crop_scale_max));
  }
}

double draw_rotation_angle(double max_deg, RngStream& rng) {
  if (!(max_deg >= 0.0 && max_deg < 45.0)) {
    throw ValidationError(fmt::format("max_deg must lie in [0, 45), got {}", max_deg));
  }
  return rng.uniform(-max_deg, max_deg);
}

Image rotate(const Image& image, double degrees) {
  if (degrees == 0.0) return image;
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double cy = (image.height() - 1) / 2.0;
  const double cx = (image.width() - 1) / 2.0;

  Image out(image.height(), image.width(), image.channels());
  for (int y = 0; y < image.height(); ++y) {
    const double dy = y - cy;
    for (int x = 0; x < image.width(); ++x) {
      const double dx = x - cx;
      const double src_x = cx + cos_t * dx - sin_t * dy;
      const double src_y = cy + sin_t * dx + cos_t * dy;
      for (int c = 0; c < image.channels(); ++c) {
        out.at(y, x, c) = clamp01(sample_bilinear(image, src_y, src_x, c, 0.0));
      }
    }
  }
  return out;
}

Image random_rotation(const Image& image, double max_deg, RngStream& rng) {
  return rotate(image, draw_rotation_angle(max_deg, rng));
}

CropWindow draw_crop_window(int height, int width, double scale_min, double scale_max,
                            RngStream& rng) {
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) {
    throw ValidationError(
        fmt::format("crop scale range must satisfy 0 < min <= max <= 1, got ({}, {})", scale_min,
                    scale_max));
  }
  CropWindow w;
  w.area_fraction = rng.uniform(scale_min, scale_max);
  const double side = std::sqrt(w.area_fraction);
  w.width = side * width;
  w.height = side * height;
  if (w.width < 1.0 || w.height < 1.0) {
    throw ValidationError(fmt::format("crop of {:.3f}x{:.3f} pixels is smaller than one pixel",
                                      w.height, w.width));
  }
  w.x0 = rng.uniform(0.0, width - w.width);
  w.y0 = rng.uniform(0.0, height - w.height);
  return w;
}

Image crop_resize(const Image& image, const CropWindow& window) {
  if (window.x0 == 0.0 && window.y0 == 0.0 && window.width == image.width() &&
      window.height == image.height()) {
    return image;
  }
  Image out = resample_window(image, window.x0, window.y0, window.width, window.height,
                              image.height(), image.width());
  for (double& v : out.data()) v = clamp01(v);
  return out;
}

Image random_resized_crop(const Image& image, double scale_min, double scale_max, RngStream& rng) {
  return crop_resize(image, draw_crop_window(image.height(), image.width(), scale_min, scale_max, rng));
}

Image apply_policy(const Image& image, const AugmentationPolicy& policy, RngStream& rng) {
  policy.validate();
  Image out = image;
  if (policy.rotation_enabled) out = random_rotation(out, policy.rotation_max_deg, rng);
  if (policy.crop_enabled) {
    out = random_resized_crop(out, policy.crop_scale_min, policy.crop_scale_max, rng);
  }
  return out;
}

}  // namespace efcxr::imaging
