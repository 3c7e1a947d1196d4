#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ficd {

enum class RangeTag : uint8_t { Raw = 0, Train = 1, Eval = 2 };

struct VolDims {
    int64_t nx = 0, ny = 0, nz = 0;
    int64_t count() const { return nx * ny * nz; }
    bool operator==(const VolDims&) const = default;
};

std::string dims_str(const VolDims& d);

// Dense 3D scalar field, x-fastest voxel order. Immutable after construction;
// stored_min/stored_max remember the pre-normalization extrema so normalized
// volumes can be mapped back to original units.
class Volume3 {
public:
    Volume3() = default;
    Volume3(VolDims dims, std::vector<double> voxels, RangeTag tag = RangeTag::Raw);
    Volume3(VolDims dims, std::vector<double> voxels, RangeTag tag, double stored_min,
            double stored_max);

    static Volume3 constant(VolDims dims, double value, RangeTag tag = RangeTag::Raw);

    const VolDims& dims() const { return dims_; }
    const std::vector<double>& voxels() const { return voxels_; }
    RangeTag tag() const { return tag_; }
    double stored_min() const { return stored_min_; }
    double stored_max() const { return stored_max_; }

    double at(int64_t x, int64_t y, int64_t z) const {
        return voxels_[static_cast<size_t>(x + dims_.nx * (y + dims_.ny * z))];
    }
    int64_t count() const { return dims_.count(); }

    double min() const;
    double max() const;
    bool all_finite() const;

    // Range invariant for the current tag; throws NumericError on violation.
    void assert_range(double slack = 0.0) const;

private:
    VolDims dims_;
    std::vector<double> voxels_;
    RangeTag tag_ = RangeTag::Raw;
    double stored_min_ = 0.0;
    double stored_max_ = 0.0;
};

// Binary {0,1} volume. Stored in FVOL containers as raw volumes with 0/1 voxels.
class Mask3 {
public:
    Mask3() = default;
    Mask3(VolDims dims, std::vector<uint8_t> voxels);

    const VolDims& dims() const { return dims_; }
    const std::vector<uint8_t>& voxels() const { return voxels_; }
    int64_t count_set() const;
    bool at(int64_t x, int64_t y, int64_t z) const {
        return voxels_[static_cast<size_t>(x + dims_.nx * (y + dims_.ny * z))] != 0;
    }

    Volume3 to_volume() const;
    static Mask3 from_volume(const Volume3& v);

private:
    VolDims dims_;
    std::vector<uint8_t> voxels_;
};

// --- normalization -----------------------------------------------------

// Affine map of the volume's value range onto the target interval.
// Raw volumes map [min,max] (constant volumes go to the interval midpoint)
// and record the original extrema; tagged volumes map their nominal range
// ([-1,1] or [0,1]) so the operation is idempotent and exactly invertible.
Volume3 normalize(const Volume3& v, RangeTag target);

// Inverse of normalize: maps a tagged volume back to [stored_min, stored_max].
Volume3 denormalize(const Volume3& v);

// --- geometry -----------------------------------------------------------

Volume3 crop_center(const Volume3& v, VolDims target);
Volume3 pad_to(const Volume3& v, VolDims target, double fill);

// Euclidean norm of central differences (one-sided at boundaries), unit spacing.
Volume3 gradient_magnitude(const Volume3& v);

// --- persistence (FVOL container) ----------------------------------------
// magic "FVOL1" | u32 nx,ny,nz | u8 range_tag | f64 min,max | f32 voxels, all LE.
// Voxels are stored as f32: write quantizes, read returns the f32 values, so
// read-then-write reproduces a file byte for byte.

void write_volume(const std::string& path, const Volume3& v);
Volume3 read_volume(const std::string& path);

void write_mask(const std::string& path, const Mask3& m);
Mask3 read_mask(const std::string& path);

}  // namespace ficd
