// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bld/common/errors.hpp"
#include "bld/nn/tensor.hpp"

namespace bld {

/// Images in [0, 1] (one per row) with integer class labels.
struct Dataset {
    Matrix<float> images;
    std::vector<int> labels;
    std::size_t image_side = 0;  // side of square images, 0 for plain vectors

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(images.cols()); }
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

/// Reads plain or gzip-compressed files through zlib.
class GzFile {
public:
    GzFile(const std::string& path, const char* mode) : file_(gzopen(path.c_str(), mode)) {
        if (file_ == nullptr) throw FormatError("cannot open " + path);
    }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;
    ~GzFile() {
        if (file_ != nullptr) gzclose(file_);
    }

    std::size_t read(void* dst, std::size_t n) {
        const int got = gzread(file_, dst, static_cast<unsigned>(n));
        if (got < 0) throw FormatError("read error");
        return static_cast<std::size_t>(got);
    }

    void write(const void* src, std::size_t n) {
        if (gzwrite(file_, src, static_cast<unsigned>(n)) != static_cast<int>(n)) throw FormatError("write error");
    }

private:
    gzFile file_;
};

inline std::uint32_t read_be32(GzFile& f, const std::string& path) {
    std::array<unsigned char, 4> b{};
    if (f.read(b.data(), 4) != 4) throw FormatError(path + ": truncated IDX header");
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

inline void write_be32(GzFile& f, std::uint32_t v) {
    const std::array<unsigned char, 4> b{static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                         static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(b.data(), 4);
}

inline std::vector<unsigned char> read_payload(GzFile& f, std::size_t n, const std::string& path) {
    std::vector<unsigned char> data(n);
    std::size_t got = 0;
    while (got < n) {
        const auto chunk = f.read(data.data() + got, std::min<std::size_t>(n - got, 1u << 30));
        if (chunk == 0) break;
        got += chunk;
    }
    if (got != n) {
        throw FormatError(path + ": truncated IDX payload (" + std::to_string(got) + " of " + std::to_string(n) +
                          " bytes)");
    }
    return data;
}

}  // namespace detail

/// Parses an IDX image file (magic 0x00000803) and label file (magic
/// 0x00000801). Either may be gzip-compressed. Pixels are scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    detail::GzFile img(images_path, "rb");
    if (const auto m = detail::read_be32(img, images_path); m != kIdxImagesMagic) {
        throw FormatError(images_path + ": bad IDX image magic " + std::to_string(m));
    }
    const auto n = detail::read_be32(img, images_path);
    const auto rows = detail::read_be32(img, images_path);
    const auto cols = detail::read_be32(img, images_path);
    const std::size_t dim = std::size_t{rows} * cols;
    const auto pixels = detail::read_payload(img, std::size_t{n} * dim, images_path);

    detail::GzFile lab(labels_path, "rb");
    if (const auto m = detail::read_be32(lab, labels_path); m != kIdxLabelsMagic) {
        throw FormatError(labels_path + ": bad IDX label magic " + std::to_string(m));
    }
    const auto nl = detail::read_be32(lab, labels_path);
    if (nl != n) throw FormatError("IDX image count " + std::to_string(n) + " != label count " + std::to_string(nl));
    const auto labels = detail::read_payload(lab, n, labels_path);

    Dataset ds;
    ds.images.resize(n, static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < pixels.size(); ++i) ds.images.data()[i] = static_cast<float>(pixels[i]) / 255.0f;
    ds.labels.assign(labels.begin(), labels.end());
    ds.image_side = rows == cols ? rows : 0;
    return ds;
}

/// Writes a dataset as IDX (pixels quantised from [0, 1] to bytes). Paths
/// ending in ".gz" are compressed.
inline void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    const auto mode = [](const std::string& p) { return p.size() > 3 && p.ends_with(".gz") ? "wb9" : "wbT"; };
    const std::size_t side = ds.image_side != 0 ? ds.image_side : 1;
    const std::size_t width = ds.image_side != 0 ? ds.image_side : ds.dim();
    {
        detail::GzFile f(images_path, mode(images_path));
        detail::write_be32(f, kIdxImagesMagic);
        detail::write_be32(f, static_cast<std::uint32_t>(ds.size()));
        detail::write_be32(f, static_cast<std::uint32_t>(side));
        detail::write_be32(f, static_cast<std::uint32_t>(width));
        std::vector<unsigned char> px(static_cast<std::size_t>(ds.images.size()));
        for (std::size_t i = 0; i < px.size(); ++i) {
            const float v = std::clamp(ds.images.data()[i], 0.0f, 1.0f);
            px[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
        f.write(px.data(), px.size());
    }
    detail::GzFile f(labels_path, mode(labels_path));
    detail::write_be32(f, kIdxLabelsMagic);
    detail::write_be32(f, static_cast<std::uint32_t>(ds.size()));
    std::vector<unsigned char> lb(ds.labels.begin(), ds.labels.end());
    f.write(lb.data(), lb.size());
}

}  // namespace bld
