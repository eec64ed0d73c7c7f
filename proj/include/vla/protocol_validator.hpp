#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace vla {

struct ProtocolViolation {
  std::size_t record = 0;  // 1-based line number in the transcript
  std::string message;
};

struct ProtocolReport {
  std::size_t records = 0;
  std::vector<ProtocolViolation> violations;

  bool ok() const noexcept { return violations.empty(); }
  /// "record 3: linguistic review: judgment 'maybe' ..." one per line, then a count line.
  std::string render() const;
};

/// Checks one envelope against its role's schema. Returns the problems found (empty: valid).
std::vector<std::string> validate_envelope(const nlohmann::json& envelope);

/// Validates a JSON-lines transcript. A line that does not parse (for instance a final line
/// cut short by a crash) is one violation; the remaining lines are still checked.
ProtocolReport validate_transcript(const std::string& text);
/// Throws IoError when the file cannot be read.
ProtocolReport validate_transcript_file(const std::filesystem::path& path);

}  // namespace vla
