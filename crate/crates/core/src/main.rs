fn main() {
    std::process::exit(splatloc::cli::main());
}
