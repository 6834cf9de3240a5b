#include "dvpe/num/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace dvpe::num {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape s, T fill) : shape(std::move(s)) {
  if (shape.size() > 4) throw std::invalid_argument("Tensor: at most 4 axes");
  data.assign(numel(shape), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape.size() > 4) throw std::invalid_argument("Tensor: at most 4 axes");
  if (numel(shape) != data.size())
    throw std::invalid_argument("Tensor: buffer length " + std::to_string(data.size()) + " does not match shape " +
                                shape_str(shape));
}

template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace dvpe::num
