#include "ficd/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "ficd/errors.hpp"

namespace ficd {

std::string dims_str(const VolDims& d) {
    return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

Volume3::Volume3(VolDims dims, std::vector<double> voxels, RangeTag tag)
    : Volume3(dims, std::move(voxels), tag, 0.0, 0.0) {
    if (!voxels_.empty()) {
        stored_min_ = min();
        stored_max_ = max();
    }
}

Volume3::Volume3(VolDims dims, std::vector<double> voxels, RangeTag tag, double stored_min,
                 double stored_max)
    : dims_(dims), voxels_(std::move(voxels)), tag_(tag), stored_min_(stored_min),
      stored_max_(stored_max) {
    if (dims_.nx <= 0 || dims_.ny <= 0 || dims_.nz <= 0)
        throw ShapeError("volume dims must be positive, got " + dims_str(dims_));
    if (static_cast<int64_t>(voxels_.size()) != dims_.count())
        throw ShapeError("volume payload has " + std::to_string(voxels_.size()) +
                         " voxels, dims " + dims_str(dims_) + " need " +
                         std::to_string(dims_.count()));
}

Volume3 Volume3::constant(VolDims dims, double value, RangeTag tag) {
    return Volume3(dims, std::vector<double>(static_cast<size_t>(dims.count()), value), tag);
}

double Volume3::min() const { return *std::min_element(voxels_.begin(), voxels_.end()); }
double Volume3::max() const { return *std::max_element(voxels_.begin(), voxels_.end()); }

bool Volume3::all_finite() const {
    for (double v : voxels_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Volume3::assert_range(double slack) const {
    double lo, hi;
    switch (tag_) {
        case RangeTag::Train: lo = -1.0; hi = 1.0; break;
        case RangeTag::Eval: lo = 0.0; hi = 1.0; break;
        default: return;
    }
    for (double v : voxels_) {
        if (v < lo - slack || v > hi + slack)
            throw NumericError("voxel value " + std::to_string(v) + " outside tagged range [" +
                               std::to_string(lo) + "," + std::to_string(hi) + "]");
    }
}

Mask3::Mask3(VolDims dims, std::vector<uint8_t> voxels) : dims_(dims), voxels_(std::move(voxels)) {
    if (static_cast<int64_t>(voxels_.size()) != dims_.count())
        throw ShapeError("mask payload size mismatch for dims " + dims_str(dims_));
}

int64_t Mask3::count_set() const {
    int64_t n = 0;
    for (uint8_t v : voxels_) n += (v != 0);
    return n;
}

Volume3 Mask3::to_volume() const {
    std::vector<double> v(voxels_.size());
    for (size_t i = 0; i < voxels_.size(); ++i) v[i] = voxels_[i] ? 1.0 : 0.0;
    return Volume3(dims_, std::move(v), RangeTag::Raw);
}

Mask3 Mask3::from_volume(const Volume3& vol) {
    std::vector<uint8_t> m(vol.voxels().size());
    for (size_t i = 0; i < m.size(); ++i) {
        const double v = vol.voxels()[i];
        if (v != 0.0 && v != 1.0)
            throw DataError("mask volume contains non-binary voxel " + std::to_string(v));
        m[i] = v != 0.0;
    }
    return Mask3(vol.dims(), std::move(m));
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

namespace {
void tag_bounds(RangeTag tag, double& lo, double& hi) {
    lo = tag == RangeTag::Train ? -1.0 : 0.0;
    hi = 1.0;
}
}  // namespace

Volume3 normalize(const Volume3& v, RangeTag target) {
    if (target == RangeTag::Raw) throw ConfigError("normalize: target must be train or eval");
    if (!v.all_finite()) throw NumericError("normalize: volume contains non-finite voxels");
    if (v.tag() == target) return v;

    double tlo, thi;
    tag_bounds(target, tlo, thi);

    double slo, shi, stored_min, stored_max;
    if (v.tag() == RangeTag::Raw) {
        slo = v.min();
        shi = v.max();
        stored_min = slo;
        stored_max = shi;
    } else {
        tag_bounds(v.tag(), slo, shi);
        stored_min = v.stored_min();
        stored_max = v.stored_max();
    }

    std::vector<double> out(v.voxels().size());
    if (shi == slo) {
        const double mid = 0.5 * (tlo + thi);
        std::fill(out.begin(), out.end(), mid);
    } else {
        const double scale = (thi - tlo) / (shi - slo);
        for (size_t i = 0; i < out.size(); ++i) out[i] = tlo + (v.voxels()[i] - slo) * scale;
    }
    return Volume3(v.dims(), std::move(out), target, stored_min, stored_max);
}

Volume3 denormalize(const Volume3& v) {
    if (v.tag() == RangeTag::Raw) return v;
    double slo, shi;
    tag_bounds(v.tag(), slo, shi);
    const double lo = v.stored_min(), hi = v.stored_max();
    std::vector<double> out(v.voxels().size());
    if (hi == lo) {
        std::fill(out.begin(), out.end(), lo);
    } else {
        const double scale = (hi - lo) / (shi - slo);
        for (size_t i = 0; i < out.size(); ++i) out[i] = lo + (v.voxels()[i] - slo) * scale;
    }
    return Volume3(v.dims(), std::move(out), RangeTag::Raw, lo, hi);
}

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

Volume3 crop_center(const Volume3& v, VolDims target) {
    const VolDims& d = v.dims();
    if (target.nx > d.nx || target.ny > d.ny || target.nz > d.nz)
        throw ShapeError("crop_center: target " + dims_str(target) + " exceeds dims " + dims_str(d));
    if (target.nx <= 0 || target.ny <= 0 || target.nz <= 0)
        throw ShapeError("crop_center: target dims must be positive");
    const int64_t ox = (d.nx - target.nx) / 2;
    const int64_t oy = (d.ny - target.ny) / 2;
    const int64_t oz = (d.nz - target.nz) / 2;
    std::vector<double> out(static_cast<size_t>(target.count()));
    for (int64_t z = 0; z < target.nz; ++z)
        for (int64_t y = 0; y < target.ny; ++y)
            for (int64_t x = 0; x < target.nx; ++x)
                out[static_cast<size_t>(x + target.nx * (y + target.ny * z))] =
                    v.at(x + ox, y + oy, z + oz);
    return Volume3(target, std::move(out), v.tag(), v.stored_min(), v.stored_max());
}

Volume3 pad_to(const Volume3& v, VolDims target, double fill) {
    const VolDims& d = v.dims();
    if (target.nx < d.nx || target.ny < d.ny || target.nz < d.nz)
        throw ShapeError("pad_to: target " + dims_str(target) + " smaller than dims " + dims_str(d));
    const int64_t ox = (target.nx - d.nx) / 2;
    const int64_t oy = (target.ny - d.ny) / 2;
    const int64_t oz = (target.nz - d.nz) / 2;
    std::vector<double> out(static_cast<size_t>(target.count()), fill);
    for (int64_t z = 0; z < d.nz; ++z)
        for (int64_t y = 0; y < d.ny; ++y)
            for (int64_t x = 0; x < d.nx; ++x)
                out[static_cast<size_t>((x + ox) + target.nx * ((y + oy) + target.ny * (z + oz)))] =
                    v.at(x, y, z);
    return Volume3(target, std::move(out), v.tag(), v.stored_min(), v.stored_max());
}

Volume3 gradient_magnitude(const Volume3& v) {
    const VolDims& d = v.dims();
    if (d.nx < 3 || d.ny < 3 || d.nz < 3)
        throw ShapeError("gradient_magnitude: dims must be >= 3 per axis, got " + dims_str(d));
    std::vector<double> out(static_cast<size_t>(d.count()));
    auto diff = [](double fwd, double bwd, double denom) { return (fwd - bwd) / denom; };
    for (int64_t z = 0; z < d.nz; ++z)
        for (int64_t y = 0; y < d.ny; ++y)
            for (int64_t x = 0; x < d.nx; ++x) {
                const double gx = x == 0          ? diff(v.at(1, y, z), v.at(0, y, z), 1.0)
                                  : x == d.nx - 1 ? diff(v.at(x, y, z), v.at(x - 1, y, z), 1.0)
                                                  : diff(v.at(x + 1, y, z), v.at(x - 1, y, z), 2.0);
                const double gy = y == 0          ? diff(v.at(x, 1, z), v.at(x, 0, z), 1.0)
                                  : y == d.ny - 1 ? diff(v.at(x, y, z), v.at(x, y - 1, z), 1.0)
                                                  : diff(v.at(x, y + 1, z), v.at(x, y - 1, z), 2.0);
                const double gz = z == 0          ? diff(v.at(x, y, 1), v.at(x, y, 0), 1.0)
                                  : z == d.nz - 1 ? diff(v.at(x, y, z), v.at(x, y, z - 1), 1.0)
                                                  : diff(v.at(x, y, z + 1), v.at(x, y, z - 1), 2.0);
                out[static_cast<size_t>(x + d.nx * (y + d.ny * z))] =
                    std::sqrt(gx * gx + gy * gy + gz * gz);
            }
    return Volume3(d, std::move(out), RangeTag::Raw);
}

// ---------------------------------------------------------------------------
// FVOL persistence
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'F', 'V', 'O', 'L', '1'};

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void put_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16),
                          static_cast<unsigned char>(bits >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void write_volume(const std::string& path, const Volume3& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    os.write(kMagic, 5);
    put_u32(os, static_cast<uint32_t>(v.dims().nx));
    put_u32(os, static_cast<uint32_t>(v.dims().ny));
    put_u32(os, static_cast<uint32_t>(v.dims().nz));
    const char tag = static_cast<char>(v.tag());
    os.write(&tag, 1);
    put_f64(os, v.stored_min());
    put_f64(os, v.stored_max());
    for (double x : v.voxels()) put_f32(os, static_cast<float>(x));
    if (!os) throw DataError("write failed for " + path);
}

Volume3 read_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kMagic, 5) != 0)
        throw DataError(path + ": bad magic, not an FVOL file");
    VolDims d;
    d.nx = get_u32(is);
    d.ny = get_u32(is);
    d.nz = get_u32(is);
    char tag_byte;
    is.read(&tag_byte, 1);
    if (!is) throw DataError(path + ": truncated header");
    if (tag_byte < 0 || tag_byte > 2)
        throw DataError(path + ": invalid range tag " + std::to_string(int(tag_byte)));
    const double lo = get_f64(is);
    const double hi = get_f64(is);
    if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0)
        throw DataError(path + ": invalid dims " + dims_str(d));
    std::vector<double> vox(static_cast<size_t>(d.count()));
    std::vector<unsigned char> raw(static_cast<size_t>(d.count()) * 4);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(is.gcount()) != raw.size())
        throw DataError(path + ": truncated payload, dims " + dims_str(d) + " need " +
                        std::to_string(d.count()) + " voxels");
    is.peek();
    if (!is.eof()) throw DataError(path + ": trailing bytes after payload");
    for (size_t i = 0; i < vox.size(); ++i) {
        uint32_t bits = static_cast<uint32_t>(raw[4 * i]) |
                        (static_cast<uint32_t>(raw[4 * i + 1]) << 8) |
                        (static_cast<uint32_t>(raw[4 * i + 2]) << 16) |
                        (static_cast<uint32_t>(raw[4 * i + 3]) << 24);
        float f;
        std::memcpy(&f, &bits, 4);
        vox[i] = static_cast<double>(f);
    }
    return Volume3(d, std::move(vox), static_cast<RangeTag>(tag_byte), lo, hi);
}

void write_mask(const std::string& path, const Mask3& m) { write_volume(path, m.to_volume()); }

Mask3 read_mask(const std::string& path) { return Mask3::from_volume(read_volume(path)); }

}  // namespace ficd
