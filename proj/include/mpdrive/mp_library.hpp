#pragma once
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpdrive/motion_primitive.hpp"
#include "mpdrive/rl_decision.hpp"

namespace mpdrive {

inline constexpr std::uint32_t kLibraryFormatVersion = 1;

// Ordered store of motion primitives; ids always equal positions. The
// decision head, when present, must be exactly one output row per primitive.
struct Library {
    std::vector<MotionPrimitive> mps;
    std::uint32_t format_version = kLibraryFormatVersion;
    std::vector<std::string> creation_log;
    std::optional<DecisionNetSnapshot> decision;
};

// Ids whose initiation classifier accepts s, ascending.
std::vector<int> available_options(const Library& lib, const std::vector<double>& s);

// Builds the chain of primitives for a subtask nothing in the library covers.
using MpFactory = std::function<std::vector<MotionPrimitive>()>;
// Told the new total option count after an append, so the decision network
// can grow its output head.
using GrowNotify = std::function<void(int option_count)>;

// If any stored primitive accepts s, returns (lowest such id, false) and
// leaves the library untouched; the decision layer makes the final choice.
// Otherwise runs the factory, appends its whole chain with fresh dense ids
// and the given tag, notifies the grower once, and returns (the new id that
// accepts s, or the last new id when none does, true). Factory failures
// propagate with the library unchanged.
std::pair<int, bool> match_or_create(Library& lib, const std::vector<double>& s,
                                     const MpFactory& factory, const std::string& subtask_tag,
                                     int creation_phase, const GrowNotify& on_grow = {});

// IEEE 802.3 CRC32 (reflected, 0xEDB88320), as used for the per-file
// checksums in the library manifest.
std::uint32_t crc32_ieee(const unsigned char* data, std::size_t n);

// Directory layout: manifest.json plus one mp_NNN/ directory per primitive
// holding actor.bin, critic.bin, classifier.bin, and decision.bin when a
// decision head is stored. The manifest carries the format version, network
// shapes, classifier scalars, termination wiring, metadata, and a CRC32 per
// binary file. load() rebinds classifier-backed termination sets to the
// (already loaded) earlier primitive's classifier object, so identity
// adjacency survives the round trip. A stored decision head whose width is
// not the primitive count is rejected on both save and load.
void save_library(const Library& lib, const std::string& dir);
Library load_library(const std::string& dir);

} // namespace mpdrive
