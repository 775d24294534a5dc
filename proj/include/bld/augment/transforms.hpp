// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bld/common/bytes.hpp"
#include "bld/common/errors.hpp"
#include "bld/common/random.hpp"
#include "bld/nn/tensor.hpp"

namespace bld::augment {

enum class TransformKind : std::uint8_t {
    identity = 0,
    rotation = 1,
    shift = 2,
    pixel_jitter = 3,
    horizontal_flip = 4,
};

inline const char* to_string(TransformKind k) {
    switch (k) {
        case TransformKind::identity: return "identity";
        case TransformKind::rotation: return "rotation";
        case TransformKind::shift: return "shift";
        case TransformKind::pixel_jitter: return "pixel_jitter";
        case TransformKind::horizontal_flip: return "horizontal_flip";
    }
    return "unknown";
}

/// Everything needed to regenerate one augmented replica of a batch.
///
/// Binary layout (11 bytes, little-endian):
///   [0]      kind
///   [1..2]   replica_index (u16)
///   [3..6]   slot A: rotation angle (f32, degrees) | shift dx (i32) | jitter seed (u32)
///   [7..10]  slot B: shift dy (i32) | jitter amplitude (f32)
/// Unused slots are zero.
struct TransformDescriptor {
    static constexpr std::size_t kEncodedBytes = 11;

    TransformKind kind = TransformKind::identity;
    std::uint16_t replica_index = 0;
    float angle_deg = 0.0f;
    std::int32_t dx = 0;
    std::int32_t dy = 0;
    std::uint32_t jitter_seed = 0;
    float jitter_amplitude = 0.0f;

    friend bool operator==(const TransformDescriptor&, const TransformDescriptor&) = default;

    std::array<std::byte, kEncodedBytes> encode() const {
        std::uint32_t a = 0;
        std::uint32_t b = 0;
        switch (kind) {
            case TransformKind::rotation: a = std::bit_cast<std::uint32_t>(angle_deg); break;
            case TransformKind::shift:
                a = static_cast<std::uint32_t>(dx);
                b = static_cast<std::uint32_t>(dy);
                break;
            case TransformKind::pixel_jitter:
                a = jitter_seed;
                b = std::bit_cast<std::uint32_t>(jitter_amplitude);
                break;
            default: break;
        }
        ByteWriter w;
        w.put(static_cast<std::uint8_t>(kind));
        w.put(replica_index);
        w.put(a);
        w.put(b);
        std::array<std::byte, kEncodedBytes> out{};
        std::copy(w.buffer().begin(), w.buffer().end(), out.begin());
        return out;
    }

    static TransformDescriptor decode(std::span<const std::byte, kEncodedBytes> bytes) {
        ByteReader r(bytes);
        TransformDescriptor d;
        const auto kind = r.get<std::uint8_t>();
        if (kind > static_cast<std::uint8_t>(TransformKind::horizontal_flip)) {
            throw FormatError("transform descriptor: unknown kind " + std::to_string(kind));
        }
        d.kind = static_cast<TransformKind>(kind);
        d.replica_index = r.get<std::uint16_t>();
        const auto a = r.get<std::uint32_t>();
        const auto b = r.get<std::uint32_t>();
        switch (d.kind) {
            case TransformKind::rotation: d.angle_deg = std::bit_cast<float>(a); break;
            case TransformKind::shift:
                d.dx = static_cast<std::int32_t>(a);
                d.dy = static_cast<std::int32_t>(b);
                break;
            case TransformKind::pixel_jitter:
                d.jitter_seed = a;
                d.jitter_amplitude = std::bit_cast<float>(b);
                break;
            default: break;
        }
        return d;
    }
};

/// Ranges from which non-identity descriptors are drawn.
struct AugmentPolicy {
    bool rotation = true;
    double max_rotation_deg = 15.0;
    bool shift = true;
    int max_shift = 2;
    bool pixel_jitter = true;
    double jitter_amplitude = 0.05;
    bool horizontal_flip = false;  // flipping digits changes their meaning

    /// Default for grayscale digit images.
    static AugmentPolicy digits() { return {}; }

    /// Only geometry-free transforms, for non-image feature vectors.
    static AugmentPolicy features_only() {
        AugmentPolicy p;
        p.rotation = false;
        p.shift = false;
        p.horizontal_flip = false;
        return p;
    }

    std::vector<TransformKind> enabled() const {
        std::vector<TransformKind> kinds;
        if (rotation) kinds.push_back(TransformKind::rotation);
        if (shift) kinds.push_back(TransformKind::shift);
        if (pixel_jitter) kinds.push_back(TransformKind::pixel_jitter);
        if (horizontal_flip) kinds.push_back(TransformKind::horizontal_flip);
        return kinds;
    }
};

/// The K descriptors of one batch. Lives exactly as long as the probability bank.
struct TransformSet {
    std::vector<TransformDescriptor> descriptors;

    std::size_t size() const noexcept { return descriptors.size(); }
    std::size_t byte_size() const noexcept { return descriptors.size() * TransformDescriptor::kEncodedBytes; }
    std::size_t payload_bytes() const noexcept { return byte_size(); }

    std::vector<std::byte> serialize() const {
        std::vector<std::byte> out;
        out.reserve(byte_size());
        for (const auto& d : descriptors) {
            const auto e = d.encode();
            out.insert(out.end(), e.begin(), e.end());
        }
        return out;
    }

    static TransformSet deserialize(std::span<const std::byte> bytes) {
        if (bytes.size() % TransformDescriptor::kEncodedBytes != 0) throw FormatError("transform set: bad length");
        TransformSet s;
        for (std::size_t off = 0; off < bytes.size(); off += TransformDescriptor::kEncodedBytes) {
            s.descriptors.push_back(TransformDescriptor::decode(
                bytes.subspan(off).template first<TransformDescriptor::kEncodedBytes>()));
        }
        return s;
    }

    friend bool operator==(const TransformSet&, const TransformSet&) = default;
};

/// Descriptor 0 is always the identity; the rest are drawn from `policy`.
inline TransformSet sample_descriptors(std::size_t count, Rng& rng, const AugmentPolicy& policy) {
    if (count < 1) throw ArgumentError("sample_descriptors: need at least one transform");
    if (count > 0xFFFF) throw ArgumentError("sample_descriptors: too many transforms");
    const auto kinds = policy.enabled();
    TransformSet set;
    set.descriptors.reserve(count);
    set.descriptors.push_back({});
    for (std::size_t k = 1; k < count; ++k) {
        TransformDescriptor d;
        d.replica_index = static_cast<std::uint16_t>(k);
        if (!kinds.empty()) d.kind = kinds[uniform_index(rng, kinds.size())];
        switch (d.kind) {
            case TransformKind::rotation:
                d.angle_deg = static_cast<float>(uniform(rng, -policy.max_rotation_deg, policy.max_rotation_deg));
                break;
            case TransformKind::shift: {
                const auto span = static_cast<std::uint64_t>(2 * policy.max_shift + 1);
                d.dx = static_cast<std::int32_t>(uniform_index(rng, span)) - policy.max_shift;
                d.dy = static_cast<std::int32_t>(uniform_index(rng, span)) - policy.max_shift;
                break;
            }
            case TransformKind::pixel_jitter:
                d.jitter_seed = static_cast<std::uint32_t>(rng() >> 32);
                d.jitter_amplitude = static_cast<float>(policy.jitter_amplitude);
                break;
            default: break;
        }
        set.descriptors.push_back(d);
    }
    return set;
}

namespace detail {

inline std::size_t require_square(std::size_t pixels, std::size_t side, TransformKind kind) {
    if (side == 0 || side * side != pixels) {
        throw ArgumentError(std::string(to_string(kind)) + " needs a square image of side " + std::to_string(side));
    }
    return side;
}

}  // namespace detail

/// Applies one descriptor to a single image of `side`x`side` pixels (side may
/// be 0 for non-image vectors, which only admit identity and jitter).
/// Resampling is nearest-neighbour with zero padding; output is clipped to [0, 1].
template <typename S>
void apply_into(std::span<const S> image, std::size_t side, const TransformDescriptor& d, std::span<S> out) {
    if (out.size() != image.size()) throw ShapeError("augment::apply: output size mismatch");
    const std::size_t n = image.size();
    auto clip = [](double v) { return static_cast<S>(std::clamp(v, 0.0, 1.0)); };
    switch (d.kind) {
        case TransformKind::identity:
            std::copy(image.begin(), image.end(), out.begin());
            return;
        case TransformKind::rotation: {
            if (!std::isfinite(d.angle_deg) || std::abs(d.angle_deg) > 180.0f) {
                throw ArgumentError("rotation angle out of range [-180, 180]");
            }
            detail::require_square(n, side, d.kind);
            const double rad = static_cast<double>(d.angle_deg) * 3.14159265358979323846 / 180.0;
            double c = std::cos(rad);
            double s = std::sin(rad);
            // Quarter turns map the pixel grid onto itself only with exact trig values.
            const double quarter = static_cast<double>(d.angle_deg) / 90.0;
            if (quarter == std::round(quarter)) {
                const int q = ((static_cast<int>(quarter) % 4) + 4) % 4;
                constexpr int cs[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
                c = cs[q][0];
                s = cs[q][1];
            }
            const double centre = (static_cast<double>(side) - 1.0) / 2.0;
            for (std::size_t y = 0; y < side; ++y) {
                for (std::size_t x = 0; x < side; ++x) {
                    const double ox = static_cast<double>(x) - centre;
                    const double oy = static_cast<double>(y) - centre;
                    const double sx = std::floor(centre + c * ox + s * oy + 0.5);
                    const double sy = std::floor(centre - s * ox + c * oy + 0.5);
                    const bool inside = sx >= 0 && sy >= 0 && sx < static_cast<double>(side) && sy < static_cast<double>(side);
                    out[y * side + x] = inside ? image[static_cast<std::size_t>(sy) * side + static_cast<std::size_t>(sx)] : S(0);
                }
            }
            return;
        }
        case TransformKind::shift: {
            detail::require_square(n, side, d.kind);
            const auto lim = static_cast<std::int64_t>(side);
            if (std::abs(static_cast<std::int64_t>(d.dx)) >= lim || std::abs(static_cast<std::int64_t>(d.dy)) >= lim) {
                throw ArgumentError("shift out of range");
            }
            for (std::int64_t y = 0; y < lim; ++y) {
                for (std::int64_t x = 0; x < lim; ++x) {
                    const std::int64_t sx = x - d.dx;
                    const std::int64_t sy = y - d.dy;
                    const bool inside = sx >= 0 && sy >= 0 && sx < lim && sy < lim;
                    out[static_cast<std::size_t>(y * lim + x)] = inside ? image[static_cast<std::size_t>(sy * lim + sx)] : S(0);
                }
            }
            return;
        }
        case TransformKind::pixel_jitter: {
            if (!(d.jitter_amplitude >= 0.0f && d.jitter_amplitude <= 1.0f)) {
                throw ArgumentError("jitter amplitude out of range [0, 1]");
            }
            Rng rng = make_rng(d.jitter_seed, 0x6a6974746572ULL);
            const double amp = d.jitter_amplitude;
            for (std::size_t i = 0; i < n; ++i) {
                out[i] = clip(static_cast<double>(image[i]) + amp * (2.0 * uniform01(rng) - 1.0));
            }
            return;
        }
        case TransformKind::horizontal_flip: {
            detail::require_square(n, side, d.kind);
            for (std::size_t y = 0; y < side; ++y) {
                for (std::size_t x = 0; x < side; ++x) out[y * side + x] = image[y * side + (side - 1 - x)];
            }
            return;
        }
    }
    throw ArgumentError("unknown transform kind");
}

template <typename S>
std::vector<S> apply(std::span<const S> image, std::size_t side, const TransformDescriptor& d) {
    std::vector<S> out(image.size());
    apply_into<S>(image, side, d, out);
    return out;
}

/// Regenerates the replica of a whole batch (one image per row).
template <typename S>
Matrix<S> apply_batch(const Matrix<S>& images, std::size_t side, const TransformDescriptor& d) {
    if (d.kind == TransformKind::identity) return images;
    Matrix<S> out(images.rows(), images.cols());
    const auto cols = static_cast<std::size_t>(images.cols());
    for (Eigen::Index r = 0; r < images.rows(); ++r) {
        apply_into<S>(std::span<const S>(images.row(r).data(), cols), side, d,
                      std::span<S>(out.row(r).data(), cols));
    }
    return out;
}

}  // namespace bld::augment
