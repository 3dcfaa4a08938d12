#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace modmeta {

enum class Material { Empty = 0, SmallMass = 1, BigMass = 2, NoMass = 3 };

inline constexpr int kMaterialCount = 4;

char material_code(Material m);

// Row-major material labels. Text form: one line per row, characters from
// {e, s, b, n}; row r of the file is grid row r.
struct MaterialMap {
    int rows = 0;
    int cols = 0;
    std::vector<Material> cells;

    Material at(int r, int c) const { return cells[static_cast<std::size_t>(r * cols + c)]; }

    static MaterialMap uniform(int rows, int cols, Material m);
    static MaterialMap parse(std::string_view text, const std::string& source = "<material map>");
    std::string to_text() const;

    bool operator==(const MaterialMap&) const = default;
};

MaterialMap load_material_map(const std::filesystem::path& path);
void save_material_map(const std::filesystem::path& path, const MaterialMap& map);

}  // namespace modmeta
