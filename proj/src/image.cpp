#include "nsfmap/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nsfmap/datagen.hpp"

namespace nsfmap {

Image::Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0f) {
    if (w <= 0 || h <= 0) throw Error("image dimensions must be positive");
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write image: " + path.string());
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    std::string bytes(img.data.size(), '\0');
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const float v = std::clamp(img.data[i], 0.0f, 1.0f);
        bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write: " + path.string());
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    char ch;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(ch);
    }
    return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open image: " + path.string());
    if (next_token(in) != "P6") throw Error("not a binary PPM: " + path.string());
    const int w = std::stoi(next_token(in));
    const int h = std::stoi(next_token(in));
    const int maxval = std::stoi(next_token(in));
    if (maxval <= 0 || maxval > 255) throw Error("unsupported PPM maxval in " + path.string());
    Image img(w, h);
    std::string bytes(img.data.size(), '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw Error("truncated PPM: " + path.string());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        img.data[i] = static_cast<float>(static_cast<unsigned char>(bytes[i])) / static_cast<float>(maxval);
    }
    return img;
}

Image resize_bilinear(const Image& img, int width, int height) {
    if (img.width == width && img.height == height) return img;
    Image out(width, height);
    const double sx = static_cast<double>(img.width) / width;
    const double sy = static_cast<double>(img.height) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double ty = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double tx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = img.at(y0, x0, c) * (1 - tx) + img.at(y0, x1, c) * tx;
                const double bot = img.at(y1, x0, c) * (1 - tx) + img.at(y1, x1, c) * tx;
                out.at(y, x, c) = static_cast<float>(top * (1 - ty) + bot * ty);
            }
        }
    }
    return out;
}

Image apply_crop(const Image& img, const CropBox& box) {
    if (box.x_min < 0 || box.y_min < 0 || box.x_max > img.width || box.y_max > img.height ||
        box.x_min >= box.x_max || box.y_min >= box.y_max) {
        std::ostringstream msg;
        msg << "crop box (" << box.x_min << ',' << box.y_min << ',' << box.x_max << ',' << box.y_max
            << ") outside " << img.width << 'x' << img.height << " image";
        throw Error(msg.str());
    }
    Image out(box.x_max - box.x_min, box.y_max - box.y_min);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y + box.y_min, x + box.x_min, c);
        }
    }
    return out;
}

std::vector<double> normalize_to_chw(const Image& img, const std::array<double, 3>& mean,
                                     const std::array<double, 3>& stdev) {
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    std::vector<double> out(plane * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * img.width + x;
            for (int c = 0; c < 3; ++c) {
                out[c * plane + p] = (img.at(y, x, c) - mean[c]) / stdev[c];
            }
        }
    }
    return out;
}

std::string format_synth_ref(const SynthImageRef& ref) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "synth:s=%d;c=%d;g=%.17g;r=%llu;n=%d", ref.state, ordinal(ref.label),
                  ref.strength, static_cast<unsigned long long>(ref.seed), ref.size);
    return buf;
}

std::optional<SynthImageRef> parse_synth_ref(const std::string& ref) {
    if (ref.rfind("synth:", 0) != 0) return std::nullopt;
    int state = 0, cls = 0, size = 0;
    double strength = 0.0;
    unsigned long long seed = 0;
    if (std::sscanf(ref.c_str(), "synth:s=%d;c=%d;g=%lf;r=%llu;n=%d", &state, &cls, &strength, &seed, &size) != 5) {
        return std::nullopt;
    }
    if (cls < 0 || cls >= kNumClasses || size <= 0) return std::nullopt;
    return SynthImageRef{state, class_from_ordinal(cls), strength, seed, size};
}

ImageSource::ImageSource(std::filesystem::path root, std::map<std::string, CropBox> crops)
    : root_(std::move(root)), crops_(std::move(crops)) {}

const Image& ImageSource::load(const std::string& ref) const {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(ref); it != cache_.end()) return *it->second;
    Image img;
    if (auto synth = parse_synth_ref(ref)) {
        img = render_synthetic_image(CycleState(synth->state), synth->label, synth->strength, synth->seed,
                                     synth->size)
                  .pixels;
    } else {
        std::filesystem::path p(ref);
        if (p.is_relative() && !root_.empty()) p = root_ / p;
        img = read_ppm(p);
    }
    if (auto c = crops_.find(ref); c != crops_.end()) img = apply_crop(img, c->second);
    auto [it, inserted] = cache_.emplace(ref, std::make_unique<Image>(std::move(img)));
    return *it->second;
}

}  // namespace nsfmap
