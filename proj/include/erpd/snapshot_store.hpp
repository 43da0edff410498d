#pragma once

#include <map>
#include <string>
#include <vector>

#include "erpd/policy.hpp"

namespace erpd {

/// Named policy snapshots plus a step-ordered history. Tags are unique;
/// putting an existing tag replaces it.
class SnapshotStore {
 public:
  void put(PolicySnapshot snap);
  // History entries must arrive in nondecreasing step order.
  void record_history(PolicySnapshot snap);

  bool contains(const std::string& tag) const { return by_tag_.count(tag) != 0; }
  const PolicySnapshot& get(const std::string& tag) const;  // NotFoundError
  std::vector<std::string> tags() const;
  const std::vector<PolicySnapshot>& history() const noexcept { return history_; }

 private:
  std::map<std::string, PolicySnapshot> by_tag_;
  std::vector<PolicySnapshot> history_;
};

}  // namespace erpd
