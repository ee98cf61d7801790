fn main() {
    std::process::exit(iontrap_nm::cli::run());
}
