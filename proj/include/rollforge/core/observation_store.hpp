#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>

namespace rollforge::core {

// Content-addressed store for observations kept out-of-band from trajectories.
class ObservationStore {
 public:
  // Returns the content key ("sha256:<hex>"); storing the same bytes twice is a no-op.
  std::string put(std::string_view observation);
  std::optional<std::string> get(const std::string& ref) const;
  std::size_t size() const;
  // Writes {ref, observation} JSON Lines; returns records written.
  std::size_t dump(const std::filesystem::path& path) const;

  static std::string key_for(std::string_view observation);

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::string> items_;
};

}  // namespace rollforge::core
