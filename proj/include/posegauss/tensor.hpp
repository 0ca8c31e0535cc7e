#pragma once

#include <Eigen/Core>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pg {

/// Dense H×W×C grid stored row-major in (y, x, c) order.
///
/// Images, feature maps, heatmaps and parameter maps all use this layout.
/// `pixels()` views the buffer as an (H·W)×C row-major matrix, which is the
/// layout the GEMM-backed convolution works on.
template <typename Scalar>
class Tensor3 {
 public:
  using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using PixelMatrix =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using PixelMap = Eigen::Map<PixelMatrix>;
  using ConstPixelMap = Eigen::Map<const PixelMatrix>;

  Tensor3() = default;
  Tensor3(int height, int width, int channels)
      : height_(height), width_(width), channels_(channels) {
    if (height < 0 || width < 0 || channels < 0)
      throw std::invalid_argument("Tensor3: negative dimension");
    data_ = Storage::Zero(Eigen::Index(height) * width * channels);
  }

  static Tensor3 constant(int height, int width, int channels, Scalar value) {
    Tensor3 t(height, width, channels);
    t.data_.setConstant(value);
    return t;
  }
  static Tensor3 zeros_like(const Tensor3& other) {
    return Tensor3(other.height_, other.width_, other.channels_);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar& operator()(int y, int x, int c) {
    return data_[(Eigen::Index(y) * width_ + x) * channels_ + c];
  }
  Scalar operator()(int y, int x, int c) const {
    return data_[(Eigen::Index(y) * width_ + x) * channels_ + c];
  }
  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  PixelMap pixels() {
    return PixelMap(data_.data(), Eigen::Index(height_) * width_, channels_);
  }
  ConstPixelMap pixels() const {
    return ConstPixelMap(data_.data(), Eigen::Index(height_) * width_, channels_);
  }

  bool same_shape(const Tensor3& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }
  bool same_spatial(const Tensor3& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }
  bool all_finite() const { return data_.allFinite(); }

  std::string shape_string() const {
    std::ostringstream os;
    os << height_ << "x" << width_ << "x" << channels_;
    return os.str();
  }

  template <typename Other>
  Tensor3<Other> cast() const {
    Tensor3<Other> out(height_, width_, channels_);
    out.data() = data_.template cast<Other>();
    return out;
  }

  /// Copies channels [begin, begin+count).
  Tensor3 slice_channels(int begin, int count) const {
    Tensor3 out(height_, width_, count);
    out.pixels() = pixels().middleCols(begin, count);
    return out;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  Storage data_;
};

template <typename Scalar>
void require_same_shape(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b,
                        const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                a.shape_string() + " vs " + b.shape_string());
}

template <typename Scalar>
void require_same_spatial(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b,
                          const char* what) {
  if (!a.same_spatial(b))
    throw std::invalid_argument(std::string(what) + ": spatial mismatch " +
                                a.shape_string() + " vs " + b.shape_string());
}

template <typename Scalar>
inline Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
inline Scalar softplus(Scalar x) {
  // log1p(exp(x)) without overflow
  return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace pg
