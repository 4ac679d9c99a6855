#pragma once

#include <functional>

namespace rockseg {

// Cooperative progress/cancellation hooks for long-running loops. Loops call
// checkpoint() at slice boundaries only, so a cancelled run stops after the
// slice it is working on.
struct RunControl {
    std::function<bool()> cancelled;
    std::function<void(double)> progress;

    void report(double fraction) const {
        if (progress) progress(fraction);
    }
    // Throws Error(cancelled) when cancellation was requested.
    void checkpoint(double fraction) const;
};

// Shared no-op instance used as the default argument.
const RunControl& no_control();

}  // namespace rockseg
