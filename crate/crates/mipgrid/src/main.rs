fn main() {
    std::process::exit(mipgrid::cli::main_entry());
}
