#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mqn/image.hpp"
#include "mqn/tensor.hpp"

namespace mqn {

// Losses and metrics take (ground truth, prediction) f32 tensors of equal shape
// and accumulate in double.

/// Mean absolute difference.
float l1_loss(const Tensor& h, const Tensor& pred);

/// Root of the mean squared difference.
float l2_loss(const Tensor& h, const Tensor& pred);

/// 1 - mean over pixels of the cosine between channel vectors. A pixel where
/// either vector has norm below 1e-12 counts as similarity 1.
float cosine_loss(const Tensor& h, const Tensor& pred);

/// Maps an image to one feature tensor per pooling stage.
using FeatureExtractor = std::function<std::vector<Tensor>(const Tensor&)>;

/// Sum over stages of the mean absolute feature difference.
float fr_loss(const Tensor& h, const Tensor& pred, const FeatureExtractor& fx);

/// Three stride-2 3x3 conv + ReLU stages (3 -> 8 -> 16 -> 16) with seeded
/// uniform weights. Stands in for a pretrained VGG16.
FeatureExtractor toy_extractor(std::uint64_t seed = 1);

struct LossWeights {
    float l1 = 1.0f;
    float l2 = 1.0f;
    float cosine = 0.1f;
    float fr = 0.05f;
};

float combined_loss(const Tensor& h, const Tensor& pred, const FeatureExtractor& fx, const LossWeights& w = {});

/// 10 log10(peak^2 / MSE); +infinity when MSE is 0.
double psnr(const Tensor& h, const Tensor& pred, double peak = 1.0);

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2) over
/// valid window positions, per channel, then averaged over channels. Images
/// smaller than the window use one uniform window covering the whole image.
double ssim(const Tensor& h, const Tensor& pred);

struct Alignment {
    HdrImage image;
    double a = 1.0, b = 0.0;
    bool degenerate = false; ///< prediction percentiles coincide; identity map used
};

/// Luminance of a linear RGB triple.
inline double luminance(double r, double g, double b)
{
    return 0.2126 * r + 0.7152 * g + 0.0722 * b;
}

/// Nearest-rank percentile (p in (0, 1]) of an unsorted sample.
double nearest_rank(std::vector<double> values, double p);

/// a*pred + b (per component, clamped at 0) with a, b chosen so that the 1st and
/// 99th luminance percentiles of pred land on those of gt.
Alignment percentile_align(const HdrImage& pred, const HdrImage& gt);

} // namespace mqn
