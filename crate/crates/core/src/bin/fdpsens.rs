fn main() {
    std::process::exit(fdpsens::cli::main_entry());
}
