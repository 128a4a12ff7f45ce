fn main() {
    std::process::exit(foregan::cli::main());
}
