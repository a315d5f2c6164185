fn main() {
    std::process::exit(medrec::cli::run());
}
