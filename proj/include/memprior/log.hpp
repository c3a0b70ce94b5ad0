#pragma once

#include <functional>
#include <string>

namespace memprior {

/// Non-fatal diagnostics go through one sink (stderr by default).
void warn(const std::string& message);
/// Like warn(), but emitted only the first time a given key is seen.
void warn_once(const std::string& key, const std::string& message);
void set_warning_sink(std::function<void(const std::string&)> sink);

}  // namespace memprior
