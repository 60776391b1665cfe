#pragma once

#include <functional>
#include <string_view>

namespace grace {

using WarningSink = std::function<void(std::string_view)>;

// Defaults to "warning: <msg>" on stderr, each distinct message once per
// process. Returns the previous sink.
WarningSink set_warning_sink(WarningSink sink);
void warn(std::string_view message);

}  // namespace grace
