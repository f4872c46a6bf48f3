#pragma once

#include "cafo/autograd.hpp"

#include <span>
#include <vector>

namespace cafo {

struct PrototypeMatrix {
    ag::Var matrix;          // [classes present, D]
    std::vector<int> classes; // row -> class id, ascending
};

/// Mean attention vector per class present in `labels`; absent classes are
/// left out. Differentiable in `attention` ([n, D]).
PrototypeMatrix class_prototypes(const ag::Var& attention, std::span<const int> labels);
Tensor class_prototypes(const Tensor& attention, std::span<const int> labels, std::vector<int>* classes = nullptr);

/// Residual norms below this give a zero direction.
inline constexpr double kQrGuard = 1e-8;

struct QrFactors {
    Tensor q; // rows x p, p = min(rows, cols)
    Tensor r; // p x cols, zero below the diagonal
};

/// Modified Gram-Schmidt over the columns of `a`. Only the first p columns
/// are pivots; every column gets R entries against those pivots.
QrFactors qr_decompose(const Tensor& a);

/// Number of strictly-upper R entries for a rows x cols input.
std::size_t qr_upper_count(std::size_t rows, std::size_t cols);

/// Mean of |R_ij| over the strictly-upper entries. Throws for cols < 2.
ag::Var qr_ortho_loss(const ag::Var& a);
double qr_ortho_loss(const Tensor& a);

/// Cross-entropy plus lambda * QR-Ortho over the batch prototypes. The QR
/// term is dropped when lambda is 0 or fewer than two features remain.
ag::Var total_loss(const ag::Var& logits, const ag::Var& attention, std::span<const int> labels, double lambda);

} // namespace cafo
