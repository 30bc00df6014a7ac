#include "opbn/params.hpp"

#include <algorithm>

#include "opbn/error.hpp"

namespace opbn {

void FlatParamView::add(std::string name, std::span<double> values) {
  entries_.push_back({std::move(name), values, size_});
  size_ += values.size();
}

void FlatParamView::add(const std::string& prefix, MlpParams& mlp) {
  for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
    add(prefix + ".W" + std::to_string(k), mlp.layers[k].weight.values());
    add(prefix + ".b" + std::to_string(k), std::span<double>(mlp.layers[k].bias));
  }
}

std::vector<double> FlatParamView::flatten() const {
  std::vector<double> flat;
  flat.reserve(size_);
  for (const auto& e : entries_) flat.insert(flat.end(), e.values.begin(), e.values.end());
  return flat;
}

void FlatParamView::unflatten(std::span<const double> flat) {
  if (flat.size() != size_) {
    throw ShapeError("FlatParamView::unflatten: got " + std::to_string(flat.size()) + " values for " +
                     std::to_string(size_) + " parameters");
  }
  for (auto& e : entries_) std::copy_n(flat.begin() + std::ptrdiff_t(e.offset), e.values.size(), e.values.begin());
}

std::size_t FlatParamView::entry_index(std::size_t offset) const {
  if (offset >= size_) throw ContractError("FlatParamView: offset " + std::to_string(offset) + " out of range");
  const auto it = std::upper_bound(entries_.begin(), entries_.end(), offset,
                                   [](std::size_t off, const Entry& e) { return off < e.offset; });
  auto k = std::size_t(std::distance(entries_.begin(), it)) - 1;
  // Empty arrays share their offset with a neighbour; they never own an element.
  while (entries_[k].values.empty()) --k;
  return k;
}

double& FlatParamView::operator[](std::size_t offset) {
  auto& e = entries_[entry_index(offset)];
  return e.values[offset - e.offset];
}

double FlatParamView::operator[](std::size_t offset) const {
  const auto& e = entries_[entry_index(offset)];
  return e.values[offset - e.offset];
}

FlatParamView::Location FlatParamView::locate(std::size_t offset) const {
  const auto& e = entries_[entry_index(offset)];
  return {e.name, offset - e.offset};
}

std::string FlatParamView::describe(std::size_t offset) const {
  const auto loc = locate(offset);
  return loc.name + "[" + std::to_string(loc.index) + "]";
}

bool FlatParamView::same_layout(const FlatParamView& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    if (entries_[k].name != other.entries_[k].name || entries_[k].values.size() != other.entries_[k].values.size()) {
      return false;
    }
  }
  return true;
}

}  // namespace opbn
