#include "rollforge/core/observation_store.hpp"

#include <algorithm>
#include <vector>

#include "rollforge/core/hash.hpp"
#include "rollforge/core/jsonl.hpp"

namespace rollforge::core {

std::string ObservationStore::key_for(std::string_view observation) {
  return "sha256:" + sha256_hex(observation);
}

std::string ObservationStore::put(std::string_view observation) {
  std::string key = key_for(observation);
  std::lock_guard lock(mu_);
  items_.try_emplace(key, observation);
  return key;
}

std::optional<std::string> ObservationStore::get(const std::string& ref) const {
  std::lock_guard lock(mu_);
  auto it = items_.find(ref);
  if (it == items_.end()) return std::nullopt;
  return it->second;
}

std::size_t ObservationStore::size() const {
  std::lock_guard lock(mu_);
  return items_.size();
}

std::size_t ObservationStore::dump(const std::filesystem::path& path) const {
  std::vector<std::pair<std::string, std::string>> items;
  {
    std::lock_guard lock(mu_);
    items.assign(items_.begin(), items_.end());
  }
  std::sort(items.begin(), items.end());
  JsonlWriter writer(path, /*truncate=*/true);
  for (const auto& [ref, obs] : items) writer.write({{"ref", ref}, {"observation", obs}});
  writer.flush();
  return items.size();
}

}  // namespace rollforge::core
