#pragma once

#include <cmath>

#include "compresslab/core/image.hpp"

namespace clab {

/// Peak signal-to-noise ratio over 8-bit images, capped at 100 dB so that
/// identical inputs produce a finite, comparable value.
inline double psnr_db(const Image8& a, const Image8& b) {
    double mse = mean_squared_error(a, b);
    if (mse <= 0.0) return 100.0;
    double v = 10.0 * std::log10(255.0 * 255.0 / mse);
    return v > 100.0 ? 100.0 : v;
}

}  // namespace clab
