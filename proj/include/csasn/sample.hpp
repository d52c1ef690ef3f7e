#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "csasn/error.hpp"
#include "csasn/image.hpp"

namespace csasn {

enum class Subtype { Benign = 0, ATC = 1, FTC = 2, MTC = 3 };

inline constexpr std::array<Subtype, 4> kAllSubtypes = {
    Subtype::Benign, Subtype::ATC, Subtype::FTC, Subtype::MTC};

// The three binary tasks, in order: ATC, FTC, MTC (each one-vs-rest).
inline constexpr std::array<Subtype, 3> kTaskSubtypes = {Subtype::ATC, Subtype::FTC,
                                                         Subtype::MTC};
inline constexpr std::size_t kNumTasks = 3;

inline std::string_view to_string(Subtype s) {
  switch (s) {
    case Subtype::Benign: return "Benign";
    case Subtype::ATC: return "ATC";
    case Subtype::FTC: return "FTC";
    case Subtype::MTC: return "MTC";
  }
  return "?";
}

inline Subtype subtype_from_string(std::string_view s) {
  for (auto t : kAllSubtypes)
    if (to_string(t) == s) return t;
  throw IoError("unknown subtype '" + std::string(s) + "'");
}

struct Sample {
  Image image;
  Subtype subtype = Subtype::Benign;
  std::string patient_id;
  std::string center_id;
  // Image path relative to the manifest directory (empty for in-memory data).
  std::string path;
  // Seed for this sample's augmentation draw; oversampled replicas differ.
  std::uint64_t augment_seed = 0;

  int malignancy() const { return subtype == Subtype::Benign ? 0 : 1; }

  // Binary label for task t (0..2): 1 iff the sample is that subtype.
  int task_label(std::size_t t) const {
    return subtype == kTaskSubtypes.at(t) ? 1 : 0;
  }
};

}  // namespace csasn
