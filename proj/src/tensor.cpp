#include "cafo/tensor.hpp"

#include "cafo/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace cafo {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_size(shape_) != data_.size())
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

Tensor Tensor::vector(std::initializer_list<double> values)
{
    return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values)
{
    return Tensor(Shape{rows, cols}, std::vector<double>(values));
}

double Tensor::item() const
{
    if (data_.size() != 1)
        throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_size(shape) != data_.size())
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v)
{
    std::fill(data_.begin(), data_.end(), v);
}

bool Tensor::all_finite() const
{
    // x*0 is 0 for finite x and NaN otherwise; the sum vectorizes.
    double acc = 0.0;
    for (double v : data_) acc += v * 0.0;
    return acc == 0.0;
}

void require_finite(const Tensor& t, const char* where)
{
    if (!t.all_finite())
        throw NonFiniteError(std::string("non-finite value produced by ") + where);
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace cafo
