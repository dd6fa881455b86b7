#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vflhlp/matrix.hpp"

namespace vflhlp {

/// One party's feature rows: integer-coded categorical fields followed by
/// numerical fields. Categorical code 0 is reserved for unseen categories.
struct FeatureBlock {
    std::size_t rows = 0;
    std::size_t num_categorical = 0;
    std::vector<std::uint32_t> categorical;  // rows x num_categorical, row-major
    Matrix numerical;                        // rows x num_numerical

    FeatureBlock() = default;
    FeatureBlock(std::size_t n, std::size_t n_cat, std::size_t n_num)
        : rows(n), num_categorical(n_cat), categorical(n * n_cat, 0), numerical(n, n_num) {}

    std::size_t num_numerical() const { return numerical.cols(); }
    std::size_t num_fields() const { return num_categorical + num_numerical(); }

    std::uint32_t& cat(std::size_t r, std::size_t f) { return categorical[r * num_categorical + f]; }
    std::uint32_t cat(std::size_t r, std::size_t f) const { return categorical[r * num_categorical + f]; }

    /// Field value as a double; categorical codes are exact integers.
    double field(std::size_t r, std::size_t f) const {
        return f < num_categorical ? static_cast<double>(cat(r, f)) : numerical(r, f - num_categorical);
    }

    void set_field(std::size_t r, std::size_t f, double v) {
        if (f < num_categorical) {
            cat(r, f) = static_cast<std::uint32_t>(v);
        } else {
            numerical(r, f - num_categorical) = v;
        }
    }

    /// Column `f` across all rows, as doubles.
    std::vector<double> column(std::size_t f) const {
        std::vector<double> out(rows);
        for (std::size_t r = 0; r < rows; ++r) out[r] = field(r, f);
        return out;
    }

    FeatureBlock select(std::span<const std::size_t> idx) const {
        FeatureBlock out(idx.size(), num_categorical, num_numerical());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t f = 0; f < num_categorical; ++f) out.cat(i, f) = cat(idx[i], f);
        }
        out.numerical = select_rows(numerical, idx);
        return out;
    }

    friend bool operator==(const FeatureBlock&, const FeatureBlock&) = default;
};

/// Column-wise concatenation of blocks sharing a row set (categorical fields
/// first, in block order, then numerical fields in block order).
inline FeatureBlock concat_features(std::span<const FeatureBlock> blocks) {
    if (blocks.empty()) return {};
    const std::size_t n = blocks.front().rows;
    std::size_t n_cat = 0;
    std::size_t n_num = 0;
    for (const auto& b : blocks) {
        if (b.rows != n) throw SchemaError("concat_features: row count mismatch");
        n_cat += b.num_categorical;
        n_num += b.num_numerical();
    }
    FeatureBlock out(n, n_cat, n_num);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t c = 0;
        std::size_t x = 0;
        for (const auto& b : blocks) {
            for (std::size_t f = 0; f < b.num_categorical; ++f) out.cat(r, c++) = b.cat(r, f);
            for (std::size_t f = 0; f < b.num_numerical(); ++f) out.numerical(r, x++) = b.numerical(r, f);
        }
    }
    return out;
}

}  // namespace vflhlp
