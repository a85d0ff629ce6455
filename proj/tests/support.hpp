#pragma once

#include <sgic/sgic.hpp>

#include <Eigen/QR>

namespace sgic::testing {

inline Vec random_vec(Rng &rng, Index p) { return rng.normal_vector(p); }

/// Random partition of p coordinates into groups of sizes 1..max_size.
inline PartitionPtr random_partition(Rng &rng, Index p, Index max_size) {
    std::vector<Index> perm(static_cast<std::size_t>(p));
    for (Index j = 0; j < p; ++j)
        perm[static_cast<std::size_t>(j)] = j;
    for (Index j = p - 1; j > 0; --j)
        std::swap(perm[static_cast<std::size_t>(j)],
                  perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(j + 1)))]);
    std::vector<std::vector<Index>> groups;
    Index at = 0;
    while (at < p) {
        const Index size = std::min<Index>(p - at, 1 + static_cast<Index>(rng.below(
                                                           static_cast<std::uint64_t>(max_size))));
        groups.emplace_back(perm.begin() + at, perm.begin() + at + size);
        at += size;
    }
    return make_partition(GroupPartition::from_groups(std::move(groups)));
}

/// Random subset of {0..G-1} with exactly k elements.
inline std::vector<Index> random_subset(Rng &rng, Index G, Index k) {
    std::vector<Index> all(static_cast<std::size_t>(G));
    for (Index g = 0; g < G; ++g)
        all[static_cast<std::size_t>(g)] = g;
    for (Index j = 0; j < k; ++j)
        std::swap(all[static_cast<std::size_t>(j)],
                  all[static_cast<std::size_t>(
                      j + static_cast<Index>(rng.below(static_cast<std::uint64_t>(G - j))))]);
    all.resize(static_cast<std::size_t>(k));
    return all;
}

/// Orthonormal basis from Householder QR of a Gaussian matrix.
inline Mat random_basis(Rng &rng, Index p, Index r) {
    const Mat q = Eigen::HouseholderQR<Mat>(rng.normal_matrix(p, r)).householderQ();
    return q.leftCols(r);
}

/// Least squares via column-pivoting QR, independent of the library's paths.
inline Vec qr_solve(const Mat &A, const Vec &b) { return A.colPivHouseholderQr().solve(b); }

inline Mat select_cols(const Mat &X, const std::vector<Index> &cols) {
    Mat out(X.rows(), static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k)
        out.col(static_cast<Index>(k)) = X.col(cols[k]);
    return out;
}

} // namespace sgic::testing
