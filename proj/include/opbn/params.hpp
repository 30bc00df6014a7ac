#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "opbn/matrix.hpp"
#include "opbn/mlp.hpp"

namespace opbn {

/// Named, non-owning views of parameter arrays laid end to end.
///
/// Offsets are assigned in registration order; a gradient view built by the
/// same registration sequence on a gradient buffer has the identical layout.
class FlatParamView {
 public:
  struct Entry {
    std::string name;
    std::span<double> values;
    std::size_t offset = 0;
  };

  struct Location {
    std::string name;
    std::size_t index = 0;
  };

  void add(std::string name, std::span<double> values);
  void add(const std::string& name, Matrix& m) { add(name, m.values()); }
  void add(const std::string& prefix, MlpParams& mlp);

  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
  [[nodiscard]] std::size_t size() const { return size_; }

  [[nodiscard]] std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  double& operator[](std::size_t offset);
  double operator[](std::size_t offset) const;

  /// Which array and element a flat offset falls in.
  [[nodiscard]] Location locate(std::size_t offset) const;
  [[nodiscard]] std::string describe(std::size_t offset) const;

  /// Same array names and sizes in the same order.
  [[nodiscard]] bool same_layout(const FlatParamView& other) const;

 private:
  [[nodiscard]] std::size_t entry_index(std::size_t offset) const;

  std::vector<Entry> entries_;
  std::size_t size_ = 0;
};

}  // namespace opbn
