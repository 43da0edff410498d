#include "erpd/snapshot_store.hpp"

#include <fmt/format.h>

#include "erpd/errors.hpp"

namespace erpd {

void SnapshotStore::put(PolicySnapshot snap) {
  const std::string tag = snap.tag();
  by_tag_.insert_or_assign(tag, std::move(snap));
}

void SnapshotStore::record_history(PolicySnapshot snap) {
  if (!history_.empty() && snap.step() < history_.back().step()) {
    throw ConfigError(fmt::format("history snapshot at step {} after step {}", snap.step(), history_.back().step()));
  }
  history_.push_back(std::move(snap));
}

const PolicySnapshot& SnapshotStore::get(const std::string& tag) const {
  auto it = by_tag_.find(tag);
  if (it == by_tag_.end()) throw NotFoundError(fmt::format("snapshot tag '{}' not found", tag));
  return it->second;
}

std::vector<std::string> SnapshotStore::tags() const {
  std::vector<std::string> out;
  for (const auto& [tag, _] : by_tag_) out.push_back(tag);
  return out;
}

}  // namespace erpd
