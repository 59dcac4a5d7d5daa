#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "codetensor/gray_image.hpp"
#include "codetensor/rng.hpp"
#include "codetensor/tensor.hpp"

namespace testutil {

/// Fresh directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    root_ = std::filesystem::temp_directory_path() /
            ("codetensor_" + tag + "_" + std::to_string(counter_++));
    std::filesystem::remove_all(root_);
    std::filesystem::create_directories(root_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(root_, ec);
  }
  std::filesystem::path path() const { return root_; }
  std::string path(const std::string& name) const {
    return (root_ / name).string();
  }

 private:
  static inline int counter_ = 0;
  std::filesystem::path root_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

inline codetensor::GrayImage const_image(std::size_t h, std::size_t w,
                                         std::uint8_t v) {
  codetensor::GrayImage img;
  img.height = h;
  img.width = w;
  img.pixels.assign(h * w, v);
  return img;
}

/// Vertical two-value stripe texture: column parity picks a or b.
inline codetensor::GrayImage stripe_image(std::size_t h, std::size_t w,
                                          std::uint8_t a, std::uint8_t b) {
  codetensor::GrayImage img = const_image(h, w, 0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) img.at(r, c) = c % 2 == 0 ? a : b;
  return img;
}

/// Uniform byte noise in [lo, hi], deterministic per seed.
inline codetensor::GrayImage noise_image(std::size_t h, std::size_t w,
                                         std::uint8_t lo, std::uint8_t hi,
                                         std::uint64_t seed) {
  codetensor::Rng rng(seed);
  codetensor::GrayImage img = const_image(h, w, 0);
  for (auto& p : img.pixels)
    p = static_cast<std::uint8_t>(lo + rng.below(hi - lo + 1));
  return img;
}

inline codetensor::Tensor3 random_tensor(std::size_t i1, std::size_t i2,
                                         std::size_t i3, std::uint64_t seed) {
  codetensor::Rng rng(seed);
  codetensor::Tensor3 t(i1, i2, i3);
  for (auto& v : t.values) v = rng.gaussian();
  return t;
}

}  // namespace testutil
