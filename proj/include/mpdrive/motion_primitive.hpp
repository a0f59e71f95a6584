#pragma once
#include <memory>
#include <string>

#include "mpdrive/ddpg.hpp"
#include "mpdrive/option_sets.hpp"

namespace mpdrive {

struct MpMetadata {
    int creation_phase = -1;
    int training_episodes = 0;
    std::string subtask; // empty until the library tags it
};

// An option: where it can start, how it acts, where it stops. The initiation
// classifier is shared so a later primitive's termination set can alias it.
struct MotionPrimitive {
    int id = -1;
    std::shared_ptr<const InitiationClassifier> initiation;
    PolicyNets policy;
    TerminationSet termination;
    MpMetadata metadata;
};

} // namespace mpdrive
