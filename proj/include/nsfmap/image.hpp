#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "nsfmap/core.hpp"

namespace nsfmap {

/// Interleaved RGB image, row-major, values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> data;  // height * width * 3

    Image() = default;
    Image(int w, int h);

    float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool operator==(const Image&) const = default;
};

/// Binary PPM (P6, maxval 255).
void write_ppm(const Image& img, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

Image resize_bilinear(const Image& img, int width, int height);

/// Region of interest in pixel coordinates, max exclusive.
struct CropBox {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;
    bool operator==(const CropBox&) const = default;
};

/// Sub-image of size (x_max - x_min) x (y_max - y_min). Throws when the box is
/// empty or leaves the image.
Image apply_crop(const Image& img, const CropBox& box);

/// Planar CHW tensor normalized with per-channel mean/std.
std::vector<double> normalize_to_chw(const Image& img, const std::array<double, 3>& mean,
                                     const std::array<double, 3>& stdev);

/// Parameters carried by a procedural image reference ("synth:...").
struct SynthImageRef {
    int state = 4;
    AnomalyClass label = AnomalyClass::NoAnomaly;
    double strength = 1.0;
    std::uint64_t seed = 0;
    int size = 16;
};

std::string format_synth_ref(const SynthImageRef& ref);
std::optional<SynthImageRef> parse_synth_ref(const std::string& ref);

/// Resolves image references to pixels. Synthetic references are rendered on
/// demand, everything else is read as a PPM file relative to root. Results
/// are memoized; safe to share between threads.
class ImageSource {
public:
    explicit ImageSource(std::filesystem::path root = {}, std::map<std::string, CropBox> crops = {});

    /// Loads (and crops, when a box is registered for ref) an image.
    const Image& load(const std::string& ref) const;
    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
    std::map<std::string, CropBox> crops_;
    mutable std::mutex mu_;
    mutable std::map<std::string, std::unique_ptr<Image>> cache_;
};

}  // namespace nsfmap
