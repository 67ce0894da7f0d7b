#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace penet {

/// Where a model or plan element was written. Locations are metadata: two
/// locations always compare equal so that models parsed from different
/// files compare structurally.
struct SourceLoc {
  std::string file;
  int line = 0;
  int column = 0;

  bool known() const { return line > 0; }
  friend bool operator==(const SourceLoc&, const SourceLoc&) { return true; }
};

struct Diagnostic {
  SourceLoc loc;
  std::string message;

  /// `file:line:col: error: message`
  std::string str() const;
};

std::ostream& operator<<(std::ostream& os, const Diagnostic& d);

}  // namespace penet
