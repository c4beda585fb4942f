#pragma once

#include "choi/numerics/tensor.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <vector>

namespace choi {

struct TripletLabel {
  int object_class = 0;
  int verb = 0;
};

/// Object-class x verb co-occurrence counts with row-normalized frequencies.
class CooccurrenceTable {
 public:
  CooccurrenceTable() = default;
  CooccurrenceTable(std::size_t num_classes, std::size_t num_verbs)
      : counts_(Matrix::Zero(Eigen::Index(num_classes), Eigen::Index(num_verbs))) {}

  std::size_t num_classes() const { return std::size_t(counts_.rows()); }
  std::size_t num_verbs() const { return std::size_t(counts_.cols()); }
  const Matrix& counts() const { return counts_; }
  Matrix& counts() { return counts_; }

  /// Frequency row; uniform 1/N for classes without any count or outside the table.
  Vector frequencies(int object_class) const {
    const auto n = counts_.cols();
    if (object_class < 0 || object_class >= counts_.rows()) return Vector::Constant(n, 1.0 / double(n));
    const double total = counts_.row(object_class).sum();
    if (total <= 0) return Vector::Constant(n, 1.0 / double(n));
    return counts_.row(object_class).transpose() / total;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["num_classes"] = num_classes();
    j["num_verbs"] = num_verbs();
    nlohmann::json freq = nlohmann::json::object(), cnt = nlohmann::json::object();
    for (Eigen::Index c = 0; c < counts_.rows(); ++c) {
      const Vector f = frequencies(int(c));
      freq[std::to_string(c)] = std::vector<double>(f.data(), f.data() + f.size());
      const Vector r = counts_.row(c).transpose();
      cnt[std::to_string(c)] = std::vector<double>(r.data(), r.data() + r.size());
    }
    j["frequencies"] = freq;
    j["counts"] = cnt;
    return j;
  }

  static CooccurrenceTable from_json(const nlohmann::json& j) {
    CooccurrenceTable t(j.at("num_classes").get<std::size_t>(), j.at("num_verbs").get<std::size_t>());
    for (auto& [k, row] : j.at("counts").items()) {
      const int c = std::stoi(k);
      const auto v = row.get<std::vector<double>>();
      if (c < 0 || c >= int(t.num_classes()) || v.size() != t.num_verbs())
        throw std::runtime_error("cooccurrence: bad row '" + k + "'");
      for (std::size_t n = 0; n < v.size(); ++n) t.counts_(c, Eigen::Index(n)) = v[n];
    }
    return t;
  }

 private:
  Matrix counts_;
};

inline CooccurrenceTable build_cooccurrence(const std::vector<TripletLabel>& triplets, std::size_t num_classes,
                                            std::size_t num_verbs) {
  if (triplets.empty()) throw std::invalid_argument("build_cooccurrence: no annotated triplets");
  CooccurrenceTable t(num_classes, num_verbs);
  for (const auto& tr : triplets) {
    if (tr.object_class < 0 || std::size_t(tr.object_class) >= num_classes || tr.verb < 0 ||
        std::size_t(tr.verb) >= num_verbs)
      throw std::out_of_range("build_cooccurrence: triplet label out of vocabulary");
    t.counts()(tr.object_class, tr.verb) += 1.0;
  }
  return t;
}

/// X_s for a pair: the verb-frequency row of the object's class.
inline Vector semantic_prior(int object_class, const CooccurrenceTable& table) {
  return table.frequencies(object_class);
}

}  // namespace choi
