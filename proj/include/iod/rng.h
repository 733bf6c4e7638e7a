#ifndef IOD_RNG_H_
#define IOD_RNG_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace iod {

// Portable seeded generator: the standard distributions are
// implementation-defined, so uniform and normal draws are done by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  double uniform();                    // [0, 1)
  double uniform(double lo, double hi);
  double normal();                     // standard normal
  std::size_t index(std::size_t n);    // [0, n)
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace iod

#endif  // IOD_RNG_H_
