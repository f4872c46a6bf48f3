#include "cafo/qr_ortho.hpp"

#include "cafo/error.hpp"

#include <algorithm>
#include <map>

namespace cafo {

PrototypeMatrix class_prototypes(const ag::Var& attention, std::span<const int> labels)
{
    if (attention.value().rank() != 2 || attention.shape()[0] != labels.size())
        throw ShapeError("class_prototypes: attention rows do not match labels");
    if (labels.empty()) throw ShapeError("class_prototypes: empty batch");
    std::map<int, std::size_t> counts;
    for (int y : labels) ++counts[y];
    PrototypeMatrix out;
    std::map<int, std::size_t> row_of;
    for (const auto& [cls, n] : counts) {
        row_of[cls] = out.classes.size();
        out.classes.push_back(cls);
    }
    // Averaging matrix M [classes, n]; prototypes = M * attention
    Tensor m({out.classes.size(), labels.size()});
    for (std::size_t i = 0; i < labels.size(); ++i)
        m.at(row_of[labels[i]], i) = 1.0 / double(counts[labels[i]]);
    out.matrix = ag::matmul(ag::constant(std::move(m)), attention);
    return out;
}

Tensor class_prototypes(const Tensor& attention, std::span<const int> labels, std::vector<int>* classes)
{
    ag::NoGradGuard ng;
    auto p = class_prototypes(ag::constant(attention), labels);
    if (classes) *classes = p.classes;
    return p.matrix.value();
}

std::size_t qr_upper_count(std::size_t rows, std::size_t cols)
{
    const std::size_t p = std::min(rows, cols);
    std::size_t r = 0;
    for (std::size_t i = 0; i < p; ++i) r += cols - 1 - i;
    return r;
}

namespace {

struct Mgs {
    std::size_t p = 0;
    std::vector<ag::Var> q;
    std::vector<std::vector<ag::Var>> r; // r[i][j], defined for j >= i
};

Mgs gram_schmidt(const ag::Var& a)
{
    if (a.value().rank() != 2) throw ShapeError("qr: expected a matrix, got " + shape_str(a.shape()));
    const std::size_t rows = a.shape()[0];
    const std::size_t cols = a.shape()[1];
    Mgs out;
    out.p = std::min(rows, cols);
    std::vector<ag::Var> v;
    v.reserve(cols);
    for (std::size_t j = 0; j < cols; ++j) v.push_back(ag::column(a, j));
    const ag::Var zero_vec = ag::constant(Tensor({rows}));
    const ag::Var zero = ag::constant(Tensor::scalar(0.0));
    out.r.resize(out.p);
    for (std::size_t i = 0; i < out.p; ++i) {
        out.r[i].resize(cols);
        ag::Var norm = ag::l2_norm(v[i]);
        out.r[i][i] = norm;
        const bool degenerate = norm.value().item() < kQrGuard;
        ag::Var qi = degenerate ? zero_vec : ag::divide(v[i], norm);
        out.q.push_back(qi);
        for (std::size_t j = i + 1; j < cols; ++j) {
            if (degenerate) {
                out.r[i][j] = zero;
                continue;
            }
            ag::Var rij = ag::dot(qi, v[j]);
            out.r[i][j] = rij;
            v[j] = ag::sub(v[j], ag::scale(qi, rij));
        }
    }
    return out;
}

} // namespace

QrFactors qr_decompose(const Tensor& a)
{
    require_finite(a, "qr_decompose");
    ag::NoGradGuard ng;
    const Mgs m = gram_schmidt(ag::constant(a));
    const std::size_t rows = a.dim(0);
    const std::size_t cols = a.dim(1);
    QrFactors f{Tensor({rows, m.p}), Tensor({m.p, cols})};
    for (std::size_t i = 0; i < m.p; ++i) {
        for (std::size_t k = 0; k < rows; ++k) f.q.at(k, i) = m.q[i].value()[k];
        for (std::size_t j = i; j < cols; ++j) f.r.at(i, j) = m.r[i][j].value().item();
    }
    return f;
}

ag::Var qr_ortho_loss(const ag::Var& a)
{
    if (a.value().rank() != 2 || a.shape()[1] < 2) throw ShapeError("qr_ortho_loss needs at least 2 features");
    const Mgs m = gram_schmidt(a);
    std::vector<ag::Var> upper;
    for (std::size_t i = 0; i < m.p; ++i)
        for (std::size_t j = i + 1; j < m.r[i].size(); ++j) upper.push_back(m.r[i][j]);
    const double r = double(upper.size());
    return ag::mul_scalar(ag::sum(ag::abs(ag::stack(upper))), 1.0 / r);
}

double qr_ortho_loss(const Tensor& a)
{
    ag::NoGradGuard ng;
    return qr_ortho_loss(ag::constant(a)).value().item();
}

ag::Var total_loss(const ag::Var& logits, const ag::Var& attention, std::span<const int> labels, double lambda)
{
    if (lambda < 0.0) throw ShapeError("lambda must be >= 0");
    ag::Var ce = ag::softmax_cross_entropy(logits, labels);
    if (lambda == 0.0 || attention.shape()[1] < 2) return ce;
    const PrototypeMatrix proto = class_prototypes(attention, labels);
    return ag::add(ce, ag::mul_scalar(qr_ortho_loss(proto.matrix), lambda));
}

} // namespace cafo
