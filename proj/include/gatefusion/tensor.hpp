#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gatefusion {

// Thrown on shape/contract violations across the numerics modules.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major float32 array. Image-like data uses NCHW ordering.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, float fill = 0.0f);
    Tensor(std::vector<int> shape, std::vector<float> data);

    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    size_t size() const { return data_.size(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](size_t i) { return data_[i]; }
    float operator[](size_t i) const { return data_[i]; }

    // NCHW accessor for 4-D tensors.
    float& at4(int n, int c, int h, int w) {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    float at4(int n, int c, int h, int w) const {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void fill(float v);

    static size_t shape_size(const std::vector<int>& shape);
    static std::string shape_str(const std::vector<int>& shape);

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

// Trainable tensor with an accumulated gradient and a stable name used by
// the model container format.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string name_, Tensor value_)
        : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

    void zero_grad() { grad.fill(0.0f); }
};

}  // namespace gatefusion
