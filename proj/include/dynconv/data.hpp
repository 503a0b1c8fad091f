#pragma once

#include <string>
#include <vector>

#include "dynconv/tensor.hpp"
#include "dynconv/train.hpp"

namespace dynconv {

// UCR-style series: one per row, labels remapped to dense [0,C),
// z-normalized per series.
struct TimeSeriesDataset {
    Tensor series;  // [N, L]
    std::vector<i64> labels;
    std::vector<i64> original_labels;  // index -> original UCR label
    i64 num_classes = 0;
    i64 length = 0;

    i64 size() const { return series.empty() ? 0 : series.dim(0); }
    LabeledData to_labeled() const;
};

struct ImageDataset {
    Tensor images;  // [N, C, H, W], values in [0,1]
    std::vector<i64> labels;
    std::vector<i64> masks;  // N*H*W pixel labels when present
    i64 num_classes = 0;

    i64 size() const { return images.empty() ? 0 : images.dim(0); }
    bool has_masks() const { return !masks.empty(); }
    LabeledData to_labeled() const { return LabeledData{images, labels, masks}; }
};

struct AugmentConfig {
    bool horizontal_flip = true;
    double rotation_range_deg = 15.0;
    double zoom_range = 0.2;         // factor in [1-z, 1+z]
    double brightness_lo = 0.8;
    double brightness_hi = 1.2;
};

// -- UCR TSV -------------------------------------------------------------------

// Tab-separated, one series per line: integer label, then the values.
TimeSeriesDataset read_ucr_tsv(const std::string& path);
void write_ucr_tsv(const TimeSeriesDataset& data, const std::string& path);

// -- IDX binary container --------------------------------------------------------

enum class IdxType : std::uint8_t { U8 = 0x08, F32 = 0x0D };

// Raw IDX payload; big-endian throughout, round-trips bit-exactly.
struct IdxArray {
    IdxType dtype = IdxType::U8;
    Shape dims;
    std::vector<std::uint8_t> bytes;

    i64 count() const { return shape_numel(dims); }
};

IdxArray read_idx(const std::string& path);
void write_idx(const IdxArray& array, const std::string& path);

IdxArray idx_from_f32(const Shape& dims, const std::vector<float>& values);
IdxArray idx_from_u8(const Shape& dims, const std::vector<std::uint8_t>& values);
std::vector<float> idx_to_f32(const IdxArray& array);

// Dataset directory layout: <dir>/{train,test}-images.idx, -labels.idx and
// optional -masks.idx. u8 images are divided by 255 on load.
ImageDataset load_image_split(const std::string& dir, const std::string& split);
void save_image_split(const ImageDataset& data, const std::string& dir, const std::string& split);

// -- augmentation ------------------------------------------------------------------

// flip(p=0.5) -> rotate U(-r,+r) -> zoom U(1-z,1+z) -> brightness U(lo,hi),
// nearest-neighbor with zero fill; the mask gets the identical geometric
// transforms and never the brightness step.
void augment(Tensor& image, Tensor* mask, const AugmentConfig& cfg, Prng& rng);

// -- synthetic generators -----------------------------------------------------------

// One bright bar per image at one of n_orientations angles (the class),
// additive Gaussian noise of the given std.
ImageDataset gen_oriented_bars(i64 n_per_class, i64 size, i64 n_orientations, Prng& rng,
                               double noise_std = 0.05);

// Rotates every image 90 degrees CCW and relabels by symmetry class
// (orientation k -> (k + n/2) mod n).
ImageDataset rotate_bars_90(const ImageDataset& data, i64 n_orientations);

// 1-3 non-overlapping filled rectangles/discs; mask labels 0 background,
// 1 rectangle, 2 disc.
ImageDataset gen_shapes_seg(i64 n, i64 size, Prng& rng, double noise_std = 0.05);

// Class c is a noisy sinusoid with c+1 cycles and random phase.
TimeSeriesDataset gen_synth_timeseries(i64 n_per_class, i64 length, i64 n_classes, Prng& rng,
                                       double noise_std = 0.1);

// -- k-fold splitting ----------------------------------------------------------------

struct FoldSplit {
    std::vector<i64> train_index;
    std::vector<i64> test_index;
};

// Test folds partition the index set; per-class counts across folds differ by
// at most one. Falls back to plain splitting (with a stderr warning) when a
// class has fewer than k members.
std::vector<FoldSplit> stratified_kfold(const std::vector<i64>& labels, i64 k, std::uint64_t seed);

}  // namespace dynconv
