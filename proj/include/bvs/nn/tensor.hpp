#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "bvs/errors.hpp"

namespace bvs::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// Ordered collection of named parameter tensors. Modules hold indices into
/// the set, gradients use a set with the same layout.
template <typename S>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Mat<S> value;
  };

  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), Mat<S>::Zero(rows, cols)});
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  Mat<S>& operator[](std::size_t i) { return entries_[i].value; }
  const Mat<S>& operator[](std::size_t i) const { return entries_[i].value; }
  const std::string& name(std::size_t i) const { return entries_[i].name; }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  Mat<S>& at(const std::string& name) { return entries_[index_of(name)].value; }
  const Mat<S>& at(const std::string& name) const { return entries_[index_of(name)].value; }

  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& e : entries_) out.add(e.name, e.value.rows(), e.value.cols());
    return out;
  }

  void set_zero() {
    for (auto& e : entries_) e.value.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& e : entries_)
      if (!e.value.allFinite()) return false;
    return true;
  }

  bool same_layout(const ParamSet& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (o.name(i) != name(i) || o[i].rows() != (*this)[i].rows() || o[i].cols() != (*this)[i].cols())
        return false;
    return true;
  }

  template <typename T>
  ParamSet<T> cast() const {
    ParamSet<T> out;
    for (const auto& e : entries_) {
      auto idx = out.add(e.name, e.value.rows(), e.value.cols());
      out[idx] = e.value.template cast<T>();
    }
    return out;
  }

  bool operator==(const ParamSet& o) const {
    if (!same_layout(o)) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (!((*this)[i].array() == o[i].array()).all()) return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace bvs::nn
