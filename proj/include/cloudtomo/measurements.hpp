#pragma once

#include "cloudtomo/geometry.hpp"
#include "cloudtomo/imager.hpp"
#include "cloudtomo/render.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cloudtomo {

struct MeasuredView {
  Camera camera;
  int satellite = 0;       // 0-based
  bool cloudbow = false;   // extra pose from the cloudbow scan
  StokesImage image;       // measured radiance, meridian frame
};

/// Multi-view measurements sharing one sun, band and exposure.
struct MeasurementSet {
  std::vector<MeasuredView> views;
  SunGeometry sun;
  BandSpec band;
  double exposure = 0.0;  // s
  std::uint64_t seed = 0;
  int saturated_pixels = 0;

  std::vector<Camera> cameras() const {
    std::vector<Camera> out;
    for (const auto& v : views) out.push_back(v.camera);
    return out;
  }
  std::vector<StokesImage> images() const {
    std::vector<StokesImage> out;
    for (const auto& v : views) out.push_back(v.image);
    return out;
  }
  Eigen::Index pixel_count() const {
    Eigen::Index n = 0;
    for (const auto& v : views) n += v.image.size();
    return n;
  }
};

}  // namespace cloudtomo
