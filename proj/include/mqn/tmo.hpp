#pragma once

#include <cstdint>
#include <string>

#include "mqn/image.hpp"

namespace mqn {

enum class TmoKind { drago, reinhard, exposure };

const char* tmo_name(TmoKind k);
TmoKind parse_tmo(const std::string& s);

struct TmoParams {
    TmoKind kind = TmoKind::reinhard;
    double bias = 0.85;     ///< drago, in (0, 1]
    double key = 0.18;      ///< reinhard, > 0
    double exposure = 0.0;  ///< exposure stops
    double gamma = 2.2;     ///< exposure, > 0

    void validate() const;

    /// key=value sidecar text (kind, bias, key, exposure, gamma).
    std::string to_text() const;
    /// Parses sidecar text or a comma-separated key=value list. Missing keys keep defaults.
    static TmoParams parse(const std::string& text);
};

/// Drago display maximum in cd/m^2.
constexpr double kDragoMaxDisplay = 100.0;
/// Offset inside the log-average luminance of the Reinhard operator.
constexpr double kReinhardDelta = 1e-6;

/// Display values in [0, 1] before 8-bit quantization. `all_zero` reports a
/// black input (the result is then black).
HdrImage tone_map(const HdrImage& h, const TmoParams& p, bool* all_zero = nullptr);

struct TmoResult {
    LdrImage image;
    bool all_zero = false;
};

/// tone_map followed by round(255 v), ties away from zero.
TmoResult tmo_apply(const HdrImage& h, const TmoParams& p);

struct RandomTmo {
    LdrImage image;
    TmoParams params;
};

/// Picks one of the three operators uniformly and draws its parameters
/// (drago bias in [0.7, 0.95], reinhard key in [0.09, 0.36], exposure in [-2, 2]
/// with gamma in [1.8, 2.4]).
RandomTmo generate_ldr_random(const HdrImage& h, std::uint64_t seed);
TmoParams random_tmo_params(std::uint64_t seed);

} // namespace mqn
