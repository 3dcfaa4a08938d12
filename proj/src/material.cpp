#include "modmeta/material.hpp"

#include "modmeta/errors.hpp"
#include "modmeta/nn_io.hpp"

namespace modmeta {

char material_code(Material m) {
    switch (m) {
        case Material::Empty: return 'e';
        case Material::SmallMass: return 's';
        case Material::BigMass: return 'b';
        case Material::NoMass: return 'n';
    }
    return '?';
}

MaterialMap MaterialMap::uniform(int rows, int cols, Material m) {
    return MaterialMap{rows, cols, std::vector<Material>(static_cast<std::size_t>(rows * cols), m)};
}

MaterialMap MaterialMap::parse(std::string_view text, const std::string& source) {
    MaterialMap map;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (map.cols == 0) map.cols = static_cast<int>(line.size());
        if (static_cast<int>(line.size()) != map.cols)
            throw DataError(source + ":" + std::to_string(line_no) + ": row has " + std::to_string(line.size()) +
                            " cells, expected " + std::to_string(map.cols));
        for (std::size_t c = 0; c < line.size(); ++c) {
            switch (line[c]) {
                case 'e': map.cells.push_back(Material::Empty); break;
                case 's': map.cells.push_back(Material::SmallMass); break;
                case 'b': map.cells.push_back(Material::BigMass); break;
                case 'n': map.cells.push_back(Material::NoMass); break;
                default:
                    throw DataError(source + ":" + std::to_string(line_no) + ":" + std::to_string(c + 1) +
                                    ": unknown material '" + std::string(1, line[c]) + "'");
            }
        }
        ++map.rows;
    }
    if (map.rows == 0) throw DataError(source + ": empty material map");
    return map;
}

std::string MaterialMap::to_text() const {
    std::string out;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) out.push_back(material_code(at(r, c)));
        out.push_back('\n');
    }
    return out;
}

MaterialMap load_material_map(const std::filesystem::path& path) {
    return MaterialMap::parse(read_file(path), path.string());
}

void save_material_map(const std::filesystem::path& path, const MaterialMap& map) {
    write_file_atomic(path, map.to_text());
}

}  // namespace modmeta
