fn main() {
    std::process::exit(clothskill::cli::run());
}
