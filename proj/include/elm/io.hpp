#pragma once

#include <string>

namespace elm {

// Whole-file helpers. Failures throw IoError naming the path.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);
void ensure_directory(const std::string& path);
bool file_exists(const std::string& path);

}  // namespace elm
